#include "fbsde/error.hpp"

#include <fmt/format.h>

namespace fbsde {

ParseError::ParseError(Kind kind, std::size_t position, const std::string& message)
    : Error(fmt::format("{} (at position {})", message, position)), kind_(kind), position_(position) {}

CflError::CflError(double cfl, std::size_t slice, std::size_t node)
    : Error(fmt::format("CFL condition violated: {:.6g} > 0.9 at slice {}, node {}", cfl, slice, node)),
      cfl_(cfl) {}

NonFiniteError::NonFiniteError(const std::string& what, std::size_t index_a, std::size_t index_b)
    : Error(fmt::format("non-finite value in {} at ({}, {})", what, index_a, index_b)),
      a_(index_a),
      b_(index_b) {}

}  // namespace fbsde
