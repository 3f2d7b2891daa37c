#pragma once

#include <Eigen/Core>
#include <memory>
#include <vector>

#include "evnn/network.hpp"

namespace evnn {

// Fused batch evaluators for the network families.  They propagate, chunk by
// chunk, the value of the net together with its input-gradient (and, when
// requested, Laplacian or full input-Hessian) channels, and run a
// hand-derived reverse pass that accumulates parameter gradients of any
// weighted combination of those channels.  The scalar tape computes the same
// quantities one sample at a time and serves as the reference implementation
// in the tests and the benchmark.

using Mat = Eigen::MatrixXd;

constexpr int kChunk = 256;

// Chunks are reduced in index order, so results do not depend on the number
// of worker threads.
inline int n_chunks(int n) { return (n + kChunk - 1) / kChunk; }

// ---------------------------------------------------------------------------
// MLP / ResNet (scalar output)
// ---------------------------------------------------------------------------

class ScalarNetKernel {
 public:
  ScalarNetKernel(const NetworkSpec& spec, bool with_lap);

  int n_params() const { return n_params_; }
  int dim() const { return d_; }
  bool with_lap() const { return with_lap_; }

  void bind(const double* theta) { theta_ = theta; }

  struct Work {
    // channel state per stage: value Z (m x n), input-gradient G
    // (m x d*n, plane j in columns [j*n, (j+1)*n)), Laplacian P (m x n).
    // Input/lift stages hold G compactly (m x d) when every column is equal.
    std::vector<Mat> Z, G, P;
    std::vector<Mat> GU, PU, Q, Wgc;  // pre-activation channel products
    std::vector<Mat> D1, D2, D3;      // activation derivatives at U
    std::vector<Mat> Zb, Gb, Pb;      // adjoints of stage outputs
    std::vector<Mat> Ub, GUb, PUb;    // adjoints of pre-activation channels
    Mat Xc;                           // d x n chunk, column per sample
    Eigen::VectorXd phi, lap;
    Mat grad;  // d x n
    Eigen::VectorXd gbuf;  // aligned gradient accumulator (bit-stable sums)
    int n = 0;
  };

  std::unique_ptr<Work> make_work() const;

  // Reusable per-thread workspace (index by omp_get_thread_num()).
  Work& pooled_work() const;

  // Forward a chunk of n <= kChunk points (X row-major n x d): fills
  // work.phi, work.grad and, if enabled, work.lap, keeping the internal
  // state needed by backward().
  void forward(Work& w, const double* X, int n) const;

  // Accumulate into gtheta the parameter gradient of
  //   sum_i a[i] phi_i + sum_ij B[i*d+j] dphi_i/dx_j + sum_i c[i] lap_i
  // for the chunk last passed to forward().  a, B, c may be null.
  void backward(Work& w, const double* a, const double* B, const double* c,
                double* gtheta) const;

  // Whole-array driver (OpenMP over chunks).  grad/lap may be null.
  void eval_all(const double* X, int n, double* phi, double* grad, double* lap) const;

  // Features feeding the linear read-out, for the chunk last passed to
  // forward(): an (out_width x n) block.
  const Mat& readout_features(const Work& w) const { return w.Z.back(); }
  int readout_width() const { return stages_.back().m_out; }
  int readout_w_offset() const { return r_w_off_; }
  int readout_b_offset() const { return r_b_off_; }

 private:
  struct Stage {
    enum Kind { Input, Lift, FC, Skip } kind;
    int m_in = 0, m_out = 0;
    int w_off = -1, b_off = -1;  // FC weights / Lift V
    int a_off = -1;              // Skip scaling
    int block_in = -1;           // Skip: stage whose output feeds the residual
    ActivationKind act = ActivationKind::Identity;
    bool grad_in_compact = false;  // input gradient channel is column-constant
  };

  bool stage_compact(int s) const {
    return (stages_[s].kind == Stage::Input || stages_[s].kind == Stage::Lift) && !with_lap_;
  }

  NetworkSpec spec_;
  std::vector<Stage> stages_;
  int d_ = 0, n_params_ = 0;
  int r_w_off_ = -1, r_b_off_ = -1;  // readout
  bool with_lap_ = false;
  const double* theta_ = nullptr;
  mutable std::vector<std::unique_ptr<Work>> pool_;
};

// ---------------------------------------------------------------------------
// ICNN (convex potential: value, transport map = input gradient, Hessian)
// ---------------------------------------------------------------------------

class IcnnKernel {
 public:
  explicit IcnnKernel(const ICNNSpec& spec);

  int n_params() const { return n_params_; }
  int dim() const { return d_; }
  int n_sym() const { return ds_; }

  void bind(const double* theta) { theta_ = theta; }

  struct Work {
    // H planes use folded symmetric storage: plane s <-> pair (p_s, q_s).
    std::vector<Mat> Z, G, H, GU, HU, D1, D2, D3;
    std::vector<Mat> Zb, Gb, Hb;
    Mat Ub, GUb, HUb;  // shared scratch (uniform width)
    Mat Xc;
    Eigen::VectorXd f;
    Mat map;   // d x n
    Mat hess;  // d*d x n (full, for the caller)
    Eigen::VectorXd gbuf;  // aligned gradient accumulator (bit-stable sums)
    int n = 0;
  };

  std::unique_ptr<Work> make_work() const;
  Work& pooled_work() const;

  void forward(Work& w, const double* X, int n) const;

  // Parameter gradient of
  //   sum_i fbar[i] f_i + Psibar[i,:] . map_i + Mbar[i,:,:] : hess_i
  // with Psibar row-major n x d and Mbar row-major n x d x d; any may be null.
  void backward(Work& w, const double* fbar, const double* Psibar, const double* Mbar,
                double* gtheta) const;

  // f / map / hess may be null; map row-major n x d, hess row-major n x d*d.
  void eval_all(const double* X, int n, double* f, double* map, double* hess) const;

 private:
  ICNNSpec spec_;
  int d_ = 0, ds_ = 0, n_params_ = 0, width_ = 0, layers_ = 0;
  std::vector<int> sym_p_, sym_q_;          // folded plane -> index pair
  std::vector<int> w_off_, a_off_, b_off_;  // per layer (w_off_[0] unused)
  int out_w_off_ = -1, out_a_off_ = -1, out_b_off_ = -1;
  const double* theta_ = nullptr;
  mutable std::vector<std::unique_ptr<Work>> pool_;
};

}  // namespace evnn
