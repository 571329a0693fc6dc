#pragma once

#include <stdexcept>
#include <string>

namespace erar {

/// A policy places probability mass where its prior has none, so a KL term
/// (and everything built on it) is infinite.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

/// The policy-induced Markov chain is not unichain: no unique stationary
/// distribution exists.
class StructuralError : public std::runtime_error {
public:
    explicit StructuralError(const std::string& what) : std::runtime_error(what) {}
};

/// A non-finite value showed up where the algorithm requires finite arithmetic
/// (losses, gradients, targets). Training aborts with diagnostics.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace erar
