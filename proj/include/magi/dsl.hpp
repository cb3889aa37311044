#pragma once

#include <stdexcept>
#include <string>

#include "magi/ode.hpp"

namespace magi {

// Parse/validation error with 1-based source position.
struct DslError : public std::runtime_error {
  DslError(const std::string& msg, int line_, int column_)
      : std::runtime_error("line " + std::to_string(line_) + ", column " +
                           std::to_string(column_) + ": " + msg),
        line(line_),
        column(column_) {}
  int line;
  int column;
};

// Parses an ODE system description into an OdeSystem whose Jacobians are
// computed by forward-mode dual numbers over the expression tree.
//
// Format (statements separated by newlines or ';', '#' starts a comment):
//
//   params: a [0, inf] b [0, inf] c [0, inf]
//   states: V R
//   dV = c * (V - V^3/3 + R)
//   dR = -(1/c) * (V - a + b*R)
//
// Expressions support + - * / ^ (right-associative power), unary minus,
// exp/log/sin/cos, numeric literals, and the time symbol `t`. The `params:`
// and `states:` headers are optional: without `states:` the states are taken
// from the `d<name> =` left-hand sides in order; without `params:` any other
// identifier becomes a parameter with bounds (-inf, inf) in order of first
// use. When `params:` is present, unknown identifiers are an error.
OdeSystem parse_ode_dsl(const std::string& source);

}  // namespace magi
