#pragma once

#include <functional>
#include <map>
#include <string>

#include "matz/autodiff.hpp"
#include "matz/matrix.hpp"

namespace matz {

/// Named trainable parameters. Ordered map so iteration (and therefore
/// training and serialization) is deterministic.
using ParamSet = std::map<std::string, Matrix>;

/// One gradient per trainable parameter, same shapes.
using Gradients = std::map<std::string, Matrix>;

namespace ad {

using VarMap = std::map<std::string, Var>;

/// Copy every parameter onto the tape as a leaf and return the handles.
/// Parameters failing `trainable` become constant inputs, so the frozen
/// part of a model contributes nothing to the backward pass.
inline VarMap bind_params(Tape& tape, const ParamSet& params,
                          const std::function<bool(const std::string&)>& trainable = {}) {
    VarMap vars;
    for (const auto& [name, value] : params) {
        if (!trainable || trainable(name)) {
            vars.emplace(name, leaf(tape, value));
        } else {
            vars.emplace(name, input(tape, value));
        }
    }
    return vars;
}

/// Read back accumulated gradients after Tape::backward. Parameters the
/// loss never touched get explicit zero matrices so every trainable entry
/// is present exactly once.
inline Gradients collect_gradients(Tape& tape, const VarMap& vars) {
    Gradients grads;
    for (const auto& [name, var] : vars) {
        if (tape.has_grad(var.id)) {
            grads.emplace(name, tape.grad(var.id));
        } else {
            const Matrix& v = tape.value(var.id);
            grads.emplace(name, Matrix(v.rows, v.cols));
        }
    }
    return grads;
}

}  // namespace ad
}  // namespace matz
