#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "evnn/activation.hpp"
#include "evnn/common.hpp"

namespace evnn {

// Flat parameter storage with a layout map back to layers.
struct LayoutEntry {
  std::string name;
  int offset = 0;
  int rows = 0;
  int cols = 0;  // cols == 1 for vectors/scalars
  int size() const { return rows * cols; }
};

struct ParamVector {
  Vec values;
  std::vector<LayoutEntry> layout;

  int size() const { return static_cast<int>(values.size()); }
  double* data() { return values.data(); }
  const double* data() const { return values.data(); }
  const LayoutEntry& entry(const std::string& name) const;
};

// Plain fully connected net, scalar output.  A shallow net is the L = 1 case.
struct MLPSpec {
  int input_dim = 1;
  std::vector<int> hidden;  // widths of the hidden layers
  ActivationKind act = ActivationKind::Tanh;
};

// z_0 = V x; per block, L fully connected width-M layers followed by a
// trainable diagonal scaling and the skip connection; linear read-out.
struct ResNetSpec {
  int input_dim = 1;
  int blocks = 1;
  int layers_per_block = 1;
  int width = 20;        // N, state width
  int inner_width = 20;  // M, fully connected width (must equal N here)
  ActivationKind act = ActivationKind::Tanh;
  ActivationKind skip_act = ActivationKind::Identity;
};

// Input-convex net: z_{l+1} = act(W_l z_l + A_l x + b_l) with W_l >= 0
// entrywise, linear read-out with nonnegative weights, plus beta/2 |x|^2.
struct ICNNSpec {
  int input_dim = 1;
  int layers = 6;
  int width = 32;
  ActivationKind act = ActivationKind::GaussSoftplus;
  double beta = 0.1;
};

// Composition of x + u h(w.x + b) layers, h = tanh; u is reparameterized at
// evaluation time so every layer Jacobian determinant stays positive.
struct PlanarFlowSpec {
  int input_dim = 1;
  int layers = 4;
};

using NetworkSpec = std::variant<MLPSpec, ResNetSpec, ICNNSpec, PlanarFlowSpec>;

struct Network {
  NetworkSpec spec;
  ParamVector params;
};

int input_dim(const NetworkSpec& spec);
int param_count(const NetworkSpec& spec);
bool is_scalar_output(const NetworkSpec& spec);

// Layout construction (offsets only, zero values).
ParamVector make_layout(const NetworkSpec& spec);

// Xavier-uniform weights from the seeded generator, zero biases; ICNN
// internal weights take the absolute value of the draw, diagonal scalings
// start at one.
Network build_network(const NetworkSpec& spec, std::uint64_t seed);

// Forward value of a scalar-output network at a single point.
double eval_scalar(const Network& net, std::span<const double> x);

// Clamp the convexity-critical ICNN weights to [0, inf).  No-op fields are
// left untouched.  Returns the number of entries that changed.
int project_icnn_weights(Network& net);
bool icnn_weights_nonnegative(const Network& net);

// (offset, size) spans of the convexity-critical entries in the flat vector.
std::vector<std::pair<int, int>> icnn_nonneg_ranges(const ICNNSpec& spec);

// Composed planar flow image and the accumulated log |det| of its Jacobian.
void planar_apply(const Network& net, std::span<const double> x, std::span<double> y,
                  double& logdet);

// JSON checkpoint; round-trips spec and parameter values bit-exactly.
std::string network_to_json(const Network& net);
Network network_from_json(const std::string& text);
void save_network(const Network& net, const std::string& path);
Network load_network(const std::string& path);

}  // namespace evnn
