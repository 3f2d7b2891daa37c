#pragma once

#include <functional>
#include <span>

#include "evnn/network.hpp"
#include "evnn/tape.hpp"

namespace evnn {

// Scalar loss over the flat parameter vector, expressed in tape arithmetic.
template <typename S>
using ScalarClosure = std::function<TVar<S>(Tape<S>&, std::span<const TVar<S>>)>;

// Exact derivative of the closure w.r.t. every parameter of the network.
GradReport grad_params(const Network& net, const ScalarClosure<double>& loss);

// Exact gradient of a scalar-output network w.r.t. the input point.
Vec grad_input(const Network& net, std::span<const double> x);

// Symmetric input Hessian via forward-over-reverse: one reverse sweep in dual
// arithmetic per coordinate direction.  Row-major d x d.
Vec hessian_input(const Network& net, std::span<const double> x);

// --- taped network evaluation -------------------------------------------

// Network value at x with parameters given as tape variables (x constant).
template <typename S>
TVar<S> tape_net_value(Tape<S>& tape, const NetworkSpec& spec,
                       std::span<const TVar<S>> theta, std::span<const double> x);

// Network value at a taped input point (parameters constant).
template <typename S>
TVar<S> tape_net_value_at(Tape<S>& tape, const Network& net, std::span<const TVar<S>> x);

// Value, input gradient and (optionally) input Hessian, all as tape values,
// with parameters taped.  The same channel recursion as the batch kernels,
// one sample at a time; used as the reference implementation.
template <typename S>
struct TapedChannels {
  TVar<S> value;
  std::vector<TVar<S>> grad;  // d entries
  std::vector<TVar<S>> hess;  // d*d entries, row-major; empty unless requested
};

template <typename S>
TapedChannels<S> tape_net_channels(Tape<S>& tape, const NetworkSpec& spec,
                                   std::span<const TVar<S>> theta, std::span<const double> x,
                                   bool need_hess);

// Planar flow image and log-determinant with parameters taped.
template <typename S>
struct TapedFlow {
  std::vector<TVar<S>> y;
  TVar<S> logdet;
};

template <typename S>
TapedFlow<S> tape_planar_apply(Tape<S>& tape, const PlanarFlowSpec& spec,
                               std::span<const TVar<S>> theta, std::span<const double> x);

}  // namespace evnn
