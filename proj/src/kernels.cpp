#include "evnn/kernels.hpp"

#include <omp.h>

#include <cmath>

namespace evnn {

namespace {

using ConstMap = Eigen::Map<const Mat>;
using VecMap = Eigen::Map<const Eigen::VectorXd>;
using MutVecMap = Eigen::Map<Eigen::VectorXd>;

// A row-major (rows x cols) parameter block reads as its transpose in
// column-major Eigen: wt(W) is W^T.  Products use W z == wt.transpose() * z
// and z^T W == (wt * z)^T without copies.
inline ConstMap wt(const double* theta, int off, int rows, int cols) {
  return ConstMap(theta + off, cols, rows);
}
inline Eigen::Map<Mat> wt_mut(double* g, int off, int rows, int cols) {
  return Eigen::Map<Mat>(g + off, cols, rows);
}

// Activation value + derivatives over the first n columns.  All matrices are
// exact-height (rows == active width).  d2/d3 optional.
void fill_act(ActivationKind k, const Mat& U, int n, Mat& Z, Mat& D1, Mat* D2, Mat* D3) {
  const int m = static_cast<int>(U.rows());
  const auto run = [&](auto f) {
    for (int c = 0; c < n; ++c) {
      const double* u = U.col(c).data();
      double* z = Z.col(c).data();
      double* d1 = D1.col(c).data();
      double* d2 = D2 ? D2->col(c).data() : nullptr;
      double* d3 = D3 ? D3->col(c).data() : nullptr;
      for (int r = 0; r < m; ++r) f(u[r], z[r], d1[r], d2 ? d2 + r : nullptr, d3 ? d3 + r : nullptr);
    }
  };
  switch (k) {
    case ActivationKind::Tanh:
      run([](double u, double& z, double& d1, double* d2, double* d3) {
        const double t = std::tanh(u);
        const double s = 1.0 - t * t;
        z = t;
        d1 = s;
        if (d2) *d2 = -2.0 * t * s;
        if (d3) *d3 = s * (6.0 * t * t - 2.0);
      });
      break;
    case ActivationKind::GaussSoftplus:
      run([](double u, double& z, double& d1, double* d2, double* d3) {
        const double g = act::kSqrt2OverPi * std::exp(-0.5 * u * u);
        const double e = 1.0 + std::erf(u * act::kInvSqrt2);
        z = u * e + g;
        d1 = e;
        if (d2) *d2 = g;
        if (d3) *d3 = -u * g;
      });
      break;
    default:
      run([k](double u, double& z, double& d1, double* d2, double* d3) {
        const auto dd = act::derivs(k, u);
        z = dd.f;
        d1 = dd.d1;
        if (d2) *d2 = dd.d2;
        if (d3) *d3 = dd.d3;
      });
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// ScalarNetKernel
// ---------------------------------------------------------------------------

ScalarNetKernel::ScalarNetKernel(const NetworkSpec& spec, bool with_lap)
    : spec_(spec), with_lap_(with_lap) {
  ParamVector layout = make_layout(spec);
  n_params_ = layout.size();
  d_ = input_dim(spec);
  auto off = [&layout](const std::string& n) { return layout.entry(n).offset; };

  if (const auto* m = std::get_if<MLPSpec>(&spec_)) {
    stages_.push_back({Stage::Input, d_, d_, -1, -1, -1, -1, ActivationKind::Identity, false});
    int in = d_;
    for (std::size_t l = 0; l < m->hidden.size(); ++l) {
      stages_.push_back({Stage::FC, in, m->hidden[l], off("W" + std::to_string(l + 1)),
                         off("b" + std::to_string(l + 1)), -1, -1, m->act, l == 0 && !with_lap_});
      in = m->hidden[l];
    }
    r_w_off_ = off("w_out");
    r_b_off_ = off("b_out");
  } else if (const auto* r = std::get_if<ResNetSpec>(&spec_)) {
    stages_.push_back({Stage::Lift, d_, r->width, off("V"), -1, -1, -1, ActivationKind::Identity, false});
    int block_in = 0;
    for (int k = 1; k <= r->blocks; ++k) {
      int in = r->width;
      for (int l = 1; l <= r->layers_per_block; ++l) {
        stages_.push_back({Stage::FC, in, r->inner_width,
                           off("W" + std::to_string(k) + "_" + std::to_string(l)),
                           off("b" + std::to_string(k) + "_" + std::to_string(l)), -1, -1, r->act,
                           k == 1 && l == 1 && !with_lap_});
        in = r->inner_width;
      }
      stages_.push_back({Stage::Skip, r->width, r->width, -1, -1, off("alpha" + std::to_string(k)),
                         block_in, r->skip_act, false});
      block_in = static_cast<int>(stages_.size()) - 1;
    }
    r_w_off_ = off("gamma");
    r_b_off_ = off("gamma0");
  } else {
    throw DomainViolation("ScalarNetKernel supports MLP and ResNet specs");
  }
}

std::unique_ptr<ScalarNetKernel::Work> ScalarNetKernel::make_work() const {
  auto w = std::make_unique<Work>();
  const int S = static_cast<int>(stages_.size());
  auto resize_all = [S](std::vector<Mat>& v) { v.resize(S); };
  resize_all(w->Z);
  resize_all(w->G);
  resize_all(w->P);
  resize_all(w->GU);
  resize_all(w->PU);
  resize_all(w->Q);
  resize_all(w->Wgc);
  resize_all(w->D1);
  resize_all(w->D2);
  resize_all(w->D3);
  resize_all(w->Zb);
  resize_all(w->Gb);
  resize_all(w->Pb);
  resize_all(w->Ub);
  resize_all(w->GUb);
  resize_all(w->PUb);
  for (int s = 0; s < S; ++s) {
    const auto& st = stages_[s];
    const int m = st.m_out;
    const bool compact_out = stage_compact(s);
    w->Z[s].setZero(m, kChunk);
    w->G[s].setZero(m, compact_out ? d_ : d_ * kChunk);
    w->Zb[s].setZero(m, kChunk);
    w->Gb[s].setZero(m, compact_out ? d_ : d_ * kChunk);
    if (with_lap_) {
      w->P[s].setZero(m, kChunk);
      w->Pb[s].setZero(m, kChunk);
    }
    const bool has_act = st.kind == Stage::FC ||
                         (st.kind == Stage::Skip && st.act != ActivationKind::Identity);
    if (has_act) {
      w->D1[s].setZero(m, kChunk);
      w->D2[s].setZero(m, kChunk);
      if (with_lap_) w->D3[s].setZero(m, kChunk);
      w->GU[s].setZero(m, d_ * kChunk);
      w->GUb[s].setZero(m, d_ * kChunk);
      w->Ub[s].setZero(m, kChunk);
      if (with_lap_) {
        w->PU[s].setZero(m, kChunk);
        w->PUb[s].setZero(m, kChunk);
        w->Q[s].setZero(m, kChunk);
      }
      if (st.kind == Stage::FC && st.grad_in_compact) w->Wgc[s].setZero(m, d_);
    } else if (st.kind == Stage::Skip) {
      w->Ub[s].setZero(m, kChunk);  // holds the residual adjoint scratch
    }
  }
  w->Xc.setZero(d_, kChunk);
  w->phi.setZero(kChunk);
  w->grad.setZero(d_, kChunk);
  if (with_lap_) w->lap.setZero(kChunk);
  w->gbuf.setZero(n_params_);
  return w;
}

ScalarNetKernel::Work& ScalarNetKernel::pooled_work() const {
  const int tid = omp_get_thread_num();
  if (pool_.empty()) {
#pragma omp critical(evnn_scalar_pool)
    if (pool_.empty()) {
      std::vector<std::unique_ptr<Work>> fresh(omp_get_max_threads());
      pool_.swap(fresh);
    }
  }
  if (!pool_[tid]) pool_[tid] = make_work();
  return *pool_[tid];
}

void ScalarNetKernel::forward(Work& w, const double* X, int n) const {
  const int S = static_cast<int>(stages_.size());
  w.n = n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d_; ++j) w.Xc(j, i) = X[i * static_cast<std::ptrdiff_t>(d_) + j];

  for (int s = 0; s < S; ++s) {
    const auto& st = stages_[s];
    switch (st.kind) {
      case Stage::Input: {
        w.Z[s].leftCols(n) = w.Xc.leftCols(n);
        if (with_lap_) {
          for (int j = 0; j < d_; ++j) {
            auto gj = w.G[s].middleCols(j * n, n);
            gj.setZero();
            gj.row(j).setOnes();
          }
          w.P[s].leftCols(n).setZero();
        } else {
          w.G[s].setIdentity();
        }
        break;
      }
      case Stage::Lift: {
        auto V = wt(theta_, st.w_off, st.m_out, d_);  // d x N == V^T
        w.Z[s].leftCols(n).noalias() = V.transpose() * w.Xc.leftCols(n);
        if (with_lap_) {
          for (int j = 0; j < d_; ++j)
            w.G[s].middleCols(j * n, n).colwise() = V.transpose().col(j);
          w.P[s].leftCols(n).setZero();
        } else {
          w.G[s] = V.transpose();  // compact: column j = V[:, j]
        }
        break;
      }
      case Stage::FC: {
        const int sin = s - 1;
        auto W = wt(theta_, st.w_off, st.m_out, st.m_in);
        VecMap b(theta_ + st.b_off, st.m_out);
        Mat& U = w.Ub[s];  // scratch: consumed by fill_act below
        U.leftCols(n).noalias() = W.transpose() * w.Z[sin].leftCols(n);
        U.leftCols(n).colwise() += b;
        if (st.grad_in_compact) {
          w.Wgc[s].noalias() = W.transpose() * w.G[sin];
          for (int j = 0; j < d_; ++j)
            w.GU[s].middleCols(j * n, n).colwise() = w.Wgc[s].col(j);
        } else {
          w.GU[s].leftCols(d_ * n).noalias() = W.transpose() * w.G[sin].leftCols(d_ * n);
        }
        if (with_lap_) {
          w.PU[s].leftCols(n).noalias() = W.transpose() * w.P[sin].leftCols(n);
          auto Q = w.Q[s].leftCols(n);
          Q.setZero();
          for (int j = 0; j < d_; ++j)
            Q.array() += w.GU[s].middleCols(j * n, n).array().square();
        }
        fill_act(st.act, U, n, w.Z[s], w.D1[s], &w.D2[s], with_lap_ ? &w.D3[s] : nullptr);
        for (int j = 0; j < d_; ++j)
          w.G[s].middleCols(j * n, n).array() =
              w.D1[s].leftCols(n).array() * w.GU[s].middleCols(j * n, n).array();
        if (with_lap_)
          w.P[s].leftCols(n).array() = w.D1[s].leftCols(n).array() * w.PU[s].leftCols(n).array() +
                                       w.D2[s].leftCols(n).array() * w.Q[s].leftCols(n).array();
        break;
      }
      case Stage::Skip: {
        const int sin = s - 1;
        const int sbi = st.block_in;
        VecMap alpha(theta_ + st.a_off, st.m_out);
        const bool bi_compact = stage_compact(sbi);
        auto p = w.Z[s].leftCols(n);
        p = w.Z[sin].leftCols(n).array().colwise() * alpha.array();
        p += w.Z[sbi].leftCols(n);
        for (int j = 0; j < d_; ++j) {
          auto gp = w.G[s].middleCols(j * n, n);
          gp = w.G[sin].middleCols(j * n, n).array().colwise() * alpha.array();
          if (bi_compact)
            gp.colwise() += w.G[sbi].col(j);
          else
            gp += w.G[sbi].middleCols(j * n, n);
        }
        if (with_lap_) {
          w.P[s].leftCols(n) = w.P[sin].leftCols(n).array().colwise() * alpha.array();
          w.P[s].leftCols(n) += w.P[sbi].leftCols(n);
        }
        if (st.act != ActivationKind::Identity) {
          // (p, Gp, Pp) become pre-activations; stash them where backward
          // expects the channel products.
          w.Ub[s].leftCols(n) = w.Z[s].leftCols(n);
          w.GU[s].leftCols(d_ * n) = w.G[s].leftCols(d_ * n);
          if (with_lap_) {
            w.PU[s].leftCols(n) = w.P[s].leftCols(n);
            auto Q = w.Q[s].leftCols(n);
            Q.setZero();
            for (int j = 0; j < d_; ++j)
              Q.array() += w.GU[s].middleCols(j * n, n).array().square();
          }
          fill_act(st.act, w.Ub[s], n, w.Z[s], w.D1[s], &w.D2[s], with_lap_ ? &w.D3[s] : nullptr);
          for (int j = 0; j < d_; ++j)
            w.G[s].middleCols(j * n, n).array() =
                w.D1[s].leftCols(n).array() * w.GU[s].middleCols(j * n, n).array();
          if (with_lap_)
            w.P[s].leftCols(n).array() =
                w.D1[s].leftCols(n).array() * w.PU[s].leftCols(n).array() +
                w.D2[s].leftCols(n).array() * w.Q[s].leftCols(n).array();
        }
        break;
      }
    }
  }
  const int sl = S - 1;
  VecMap gamma(theta_ + r_w_off_, stages_[sl].m_out);
  w.phi.head(n).noalias() = w.Z[sl].leftCols(n).transpose() * gamma;
  w.phi.head(n).array() += theta_[r_b_off_];
  for (int j = 0; j < d_; ++j)
    w.grad.row(j).head(n).noalias() = gamma.transpose() * w.G[sl].middleCols(j * n, n);
  if (with_lap_) w.lap.head(n).noalias() = w.P[sl].leftCols(n).transpose() * gamma;
}

void ScalarNetKernel::backward(Work& w, const double* a, const double* B, const double* c,
                               double* gtheta_out) const {
  const int S = static_cast<int>(stages_.size());
  const int n = w.n;
  w.gbuf.setZero();
  double* gtheta = w.gbuf.data();
  for (int s = 0; s < S; ++s) {
    w.Zb[s].leftCols(n).setZero();
    if (stage_compact(s))
      w.Gb[s].setZero();
    else
      w.Gb[s].leftCols(d_ * n).setZero();
    if (with_lap_) w.Pb[s].leftCols(n).setZero();
  }

  const int sl = S - 1;
  VecMap gamma(theta_ + r_w_off_, stages_[sl].m_out);
  MutVecMap gamma_bar(gtheta + r_w_off_, stages_[sl].m_out);

  if (a) {
    for (int i = 0; i < n; ++i) {
      if (a[i] == 0.0) continue;
      w.Zb[sl].col(i) = a[i] * gamma;
      gamma_bar.noalias() += a[i] * w.Z[sl].col(i);
      gtheta[r_b_off_] += a[i];
    }
  }
  if (B) {
    for (int j = 0; j < d_; ++j) {
      auto gbj = w.Gb[sl].middleCols(j * n, n);
      auto gj = w.G[sl].middleCols(j * n, n);
      for (int i = 0; i < n; ++i) {
        const double bij = B[i * static_cast<std::ptrdiff_t>(d_) + j];
        if (bij == 0.0) continue;
        gbj.col(i) += bij * gamma;
        gamma_bar.noalias() += bij * gj.col(i);
      }
    }
  }
  if (c && with_lap_) {
    for (int i = 0; i < n; ++i) {
      if (c[i] == 0.0) continue;
      w.Pb[sl].col(i) += c[i] * gamma;
      gamma_bar.noalias() += c[i] * w.P[sl].col(i);
    }
  }

  for (int s = S - 1; s >= 0; --s) {
    const auto& st = stages_[s];
    switch (st.kind) {
      case Stage::FC: {
        const int sin = s - 1;
        auto W = wt(theta_, st.w_off, st.m_out, st.m_in);
        auto Wbar = wt_mut(gtheta, st.w_off, st.m_out, st.m_in);
        MutVecMap bbar(gtheta + st.b_off, st.m_out);

        auto Ub = w.Ub[s].leftCols(n);
        Ub.array() = w.D1[s].leftCols(n).array() * w.Zb[s].leftCols(n).array();
        for (int j = 0; j < d_; ++j)
          Ub.array() += w.D2[s].leftCols(n).array() *
                        w.GU[s].middleCols(j * n, n).array() *
                        w.Gb[s].middleCols(j * n, n).array();
        if (with_lap_) {
          Ub.array() += w.D2[s].leftCols(n).array() * w.PU[s].leftCols(n).array() *
                            w.Pb[s].leftCols(n).array() +
                        w.D3[s].leftCols(n).array() * w.Q[s].leftCols(n).array() *
                            w.Pb[s].leftCols(n).array();
        }
        for (int j = 0; j < d_; ++j) {
          auto gub = w.GUb[s].middleCols(j * n, n);
          gub.array() = w.D1[s].leftCols(n).array() * w.Gb[s].middleCols(j * n, n).array();
          if (with_lap_)
            gub.array() += 2.0 * w.D2[s].leftCols(n).array() *
                           w.GU[s].middleCols(j * n, n).array() * w.Pb[s].leftCols(n).array();
        }
        if (with_lap_)
          w.PUb[s].leftCols(n).array() =
              w.D1[s].leftCols(n).array() * w.Pb[s].leftCols(n).array();

        bbar.noalias() += Ub.rowwise().sum();
        Wbar.noalias() += w.Z[sin].leftCols(n) * Ub.transpose();
        w.Zb[sin].leftCols(n).noalias() += W * Ub;
        if (st.grad_in_compact) {
          // column-constant input gradient: reduce over samples first
          for (int j = 0; j < d_; ++j) {
            Eigen::VectorXd r = w.GUb[s].middleCols(j * n, n).rowwise().sum();
            Wbar.noalias() += w.G[sin].col(j) * r.transpose();
            w.Gb[sin].col(j).noalias() += W * r;
          }
        } else {
          Wbar.noalias() += w.G[sin].leftCols(d_ * n) * w.GUb[s].leftCols(d_ * n).transpose();
          w.Gb[sin].leftCols(d_ * n).noalias() += W * w.GUb[s].leftCols(d_ * n);
        }
        if (with_lap_) {
          Wbar.noalias() += w.P[sin].leftCols(n) * w.PUb[s].leftCols(n).transpose();
          w.Pb[sin].leftCols(n).noalias() += W * w.PUb[s].leftCols(n);
        }
        break;
      }
      case Stage::Skip: {
        const int sin = s - 1;
        const int sbi = st.block_in;
        VecMap alpha(theta_ + st.a_off, st.m_out);
        MutVecMap alpha_bar(gtheta + st.a_off, st.m_out);
        const bool bi_compact = stage_compact(sbi);

        // adjoints of (p, Gp, Pp)
        Mat* pbar_m = &w.Zb[s];
        Mat* gpbar_m = &w.Gb[s];
        Mat* ppbar_m = &w.Pb[s];
        if (st.act != ActivationKind::Identity) {
          auto pb = w.Ub[s].leftCols(n);
          pb.array() = w.D1[s].leftCols(n).array() * w.Zb[s].leftCols(n).array();
          for (int j = 0; j < d_; ++j)
            pb.array() += w.D2[s].leftCols(n).array() * w.GU[s].middleCols(j * n, n).array() *
                          w.Gb[s].middleCols(j * n, n).array();
          if (with_lap_)
            pb.array() += (w.D2[s].leftCols(n).array() * w.PU[s].leftCols(n).array() +
                           w.D3[s].leftCols(n).array() * w.Q[s].leftCols(n).array()) *
                          w.Pb[s].leftCols(n).array();
          for (int j = 0; j < d_; ++j) {
            auto gub = w.GUb[s].middleCols(j * n, n);
            gub.array() = w.D1[s].leftCols(n).array() * w.Gb[s].middleCols(j * n, n).array();
            if (with_lap_)
              gub.array() += 2.0 * w.D2[s].leftCols(n).array() *
                             w.GU[s].middleCols(j * n, n).array() * w.Pb[s].leftCols(n).array();
          }
          if (with_lap_)
            w.PUb[s].leftCols(n).array() =
                w.D1[s].leftCols(n).array() * w.Pb[s].leftCols(n).array();
          pbar_m = &w.Ub[s];
          gpbar_m = &w.GUb[s];
          ppbar_m = &w.PUb[s];
        }
        auto pbar = pbar_m->leftCols(n);
        // inner-chain h channels that fed the scaling
        const Mat& h = w.Z[sin];
        const Mat& gh = w.G[sin];
        alpha_bar.noalias() += (pbar.array() * h.leftCols(n).array()).matrix().rowwise().sum();
        w.Zb[sin].leftCols(n).array() += pbar.array().colwise() * alpha.array();
        w.Zb[sbi].leftCols(n) += pbar;
        for (int j = 0; j < d_; ++j) {
          auto gpbar = gpbar_m->middleCols(j * n, n);
          alpha_bar.noalias() +=
              (gpbar.array() * gh.middleCols(j * n, n).array()).matrix().rowwise().sum();
          w.Gb[sin].middleCols(j * n, n).array() += gpbar.array().colwise() * alpha.array();
          if (bi_compact)
            w.Gb[sbi].col(j).noalias() += gpbar.rowwise().sum();
          else
            w.Gb[sbi].middleCols(j * n, n) += gpbar;
        }
        if (with_lap_) {
          auto ppbar = ppbar_m->leftCols(n);
          alpha_bar.noalias() +=
              (ppbar.array() * w.P[sin].leftCols(n).array()).matrix().rowwise().sum();
          w.Pb[sin].leftCols(n).array() += ppbar.array().colwise() * alpha.array();
          w.Pb[sbi].leftCols(n) += ppbar;
        }
        break;
      }
      case Stage::Lift: {
        auto Vbar = wt_mut(gtheta, st.w_off, st.m_out, d_);  // d x N view of Vbar
        Vbar.noalias() += w.Xc.leftCols(n) * w.Zb[s].leftCols(n).transpose();
        if (stage_compact(s)) {
          Vbar.noalias() += w.Gb[s].transpose();
        } else {
          for (int j = 0; j < d_; ++j)
            Vbar.row(j).noalias() += w.Gb[s].middleCols(j * n, n).rowwise().sum().transpose();
        }
        break;
      }
      case Stage::Input:
        break;  // inputs carry no parameters
    }
  }
  for (int i = 0; i < n_params_; ++i) gtheta_out[i] += gtheta[i];
}

void ScalarNetKernel::eval_all(const double* X, int n, double* phi, double* grad,
                               double* lap) const {
  const int nc = n_chunks(n);
#pragma omp parallel
  {
    Work& w = pooled_work();
#pragma omp for schedule(static)
    for (int cidx = 0; cidx < nc; ++cidx) {
      const int i0 = cidx * kChunk;
      const int len = std::min(kChunk, n - i0);
      forward(w, X + static_cast<std::ptrdiff_t>(i0) * d_, len);
      for (int i = 0; i < len; ++i) {
        if (phi) phi[i0 + i] = w.phi[i];
        if (grad)
          for (int j = 0; j < d_; ++j)
            grad[(i0 + i) * static_cast<std::ptrdiff_t>(d_) + j] = w.grad(j, i);
        if (lap) lap[i0 + i] = with_lap_ ? w.lap[i] : 0.0;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// IcnnKernel
// ---------------------------------------------------------------------------

IcnnKernel::IcnnKernel(const ICNNSpec& spec) : spec_(spec) {
  ParamVector layout = make_layout(spec);
  n_params_ = layout.size();
  d_ = spec.input_dim;
  ds_ = d_ * (d_ + 1) / 2;
  width_ = spec.width;
  layers_ = spec.layers;
  for (int p = 0; p < d_; ++p)
    for (int q = p; q < d_; ++q) {
      sym_p_.push_back(p);
      sym_q_.push_back(q);
    }
  auto off = [&layout](const std::string& n) { return layout.entry(n).offset; };
  w_off_.assign(layers_, -1);
  a_off_.assign(layers_, -1);
  b_off_.assign(layers_, -1);
  a_off_[0] = off("A0");
  b_off_[0] = off("b0");
  for (int l = 1; l < layers_; ++l) {
    w_off_[l] = off("W" + std::to_string(l));
    a_off_[l] = off("A" + std::to_string(l));
    b_off_[l] = off("b" + std::to_string(l));
  }
  out_w_off_ = off("w_out");
  out_a_off_ = off("a_out");
  out_b_off_ = off("b_out");
}

std::unique_ptr<IcnnKernel::Work> IcnnKernel::make_work() const {
  auto w = std::make_unique<Work>();
  const int L = layers_;
  w->Z.resize(L);
  w->G.resize(L);
  w->H.resize(L);
  w->GU.resize(L);
  w->HU.resize(L);
  w->D1.resize(L);
  w->D2.resize(L);
  w->D3.resize(L);
  w->Zb.resize(L);
  w->Gb.resize(L);
  w->Hb.resize(L);
  for (int l = 0; l < L; ++l) {
    w->Z[l].setZero(width_, kChunk);
    w->G[l].setZero(width_, d_ * kChunk);
    w->H[l].setZero(width_, ds_ * kChunk);
    w->GU[l].setZero(width_, d_ * kChunk);
    if (l > 0) w->HU[l].setZero(width_, ds_ * kChunk);
    w->D1[l].setZero(width_, kChunk);
    w->D2[l].setZero(width_, kChunk);
    w->D3[l].setZero(width_, kChunk);
    w->Zb[l].setZero(width_, kChunk);
    w->Gb[l].setZero(width_, d_ * kChunk);
    w->Hb[l].setZero(width_, ds_ * kChunk);
  }
  w->Ub.setZero(width_, kChunk);
  w->GUb.setZero(width_, d_ * kChunk);
  w->HUb.setZero(width_, ds_ * kChunk);
  w->Xc.setZero(d_, kChunk);
  w->f.setZero(kChunk);
  w->map.setZero(d_, kChunk);
  w->hess.setZero(d_ * d_, kChunk);
  w->gbuf.setZero(n_params_);
  return w;
}

IcnnKernel::Work& IcnnKernel::pooled_work() const {
  const int tid = omp_get_thread_num();
  if (pool_.empty()) {
#pragma omp critical(evnn_icnn_pool)
    if (pool_.empty()) {
      std::vector<std::unique_ptr<Work>> fresh(omp_get_max_threads());
      pool_.swap(fresh);
    }
  }
  if (!pool_[tid]) pool_[tid] = make_work();
  return *pool_[tid];
}

void IcnnKernel::forward(Work& w, const double* X, int n) const {
  w.n = n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d_; ++j) w.Xc(j, i) = X[i * static_cast<std::ptrdiff_t>(d_) + j];

  Mat& U = w.Ub;
  for (int l = 0; l < layers_; ++l) {
    auto A = wt(theta_, a_off_[l], width_, d_);  // d x width == A^T
    VecMap b(theta_ + b_off_[l], width_);
    if (l == 0) {
      U.leftCols(n).noalias() = A.transpose() * w.Xc.leftCols(n);
      U.leftCols(n).colwise() += b;
      for (int j = 0; j < d_; ++j)
        w.GU[l].middleCols(j * n, n).colwise() = A.transpose().col(j);
    } else {
      auto W = wt(theta_, w_off_[l], width_, width_);
      U.leftCols(n).noalias() = W.transpose() * w.Z[l - 1].leftCols(n);
      U.leftCols(n).noalias() += A.transpose() * w.Xc.leftCols(n);
      U.leftCols(n).colwise() += b;
      w.GU[l].leftCols(d_ * n).noalias() = W.transpose() * w.G[l - 1].leftCols(d_ * n);
      for (int j = 0; j < d_; ++j)
        w.GU[l].middleCols(j * n, n).colwise() += A.transpose().col(j);
      w.HU[l].leftCols(ds_ * n).noalias() = W.transpose() * w.H[l - 1].leftCols(ds_ * n);
    }
    fill_act(spec_.act, U, n, w.Z[l], w.D1[l], &w.D2[l], &w.D3[l]);
    for (int j = 0; j < d_; ++j)
      w.G[l].middleCols(j * n, n).array() =
          w.D1[l].leftCols(n).array() * w.GU[l].middleCols(j * n, n).array();
    for (int s = 0; s < ds_; ++s) {
      auto h = w.H[l].middleCols(s * n, n);
      h.array() = w.D2[l].leftCols(n).array() * w.GU[l].middleCols(sym_p_[s] * n, n).array() *
                  w.GU[l].middleCols(sym_q_[s] * n, n).array();
      if (l > 0)
        h.array() += w.D1[l].leftCols(n).array() * w.HU[l].middleCols(s * n, n).array();
    }
  }

  const int lt = layers_ - 1;
  VecMap wout(theta_ + out_w_off_, width_);
  VecMap aout(theta_ + out_a_off_, d_);
  const double bout = theta_[out_b_off_];
  const double beta = spec_.beta;
  w.f.head(n).noalias() = w.Z[lt].leftCols(n).transpose() * wout;
  for (int i = 0; i < n; ++i) {
    double x2 = w.Xc.col(i).head(d_).squaredNorm();
    w.f[i] += bout + aout.dot(w.Xc.col(i).head(d_)) + 0.5 * beta * x2;
  }
  for (int j = 0; j < d_; ++j) {
    w.map.row(j).head(n).noalias() = wout.transpose() * w.G[lt].middleCols(j * n, n);
    w.map.row(j).head(n).array() += aout[j];
    w.map.row(j).head(n) += beta * w.Xc.row(j).head(n);
  }
  for (int s = 0; s < ds_; ++s) {
    const int p = sym_p_[s], q = sym_q_[s];
    Eigen::RowVectorXd hs = wout.transpose() * w.H[lt].middleCols(s * n, n);
    if (p == q) hs.array() += beta;
    w.hess.row(p * d_ + q).head(n) = hs;
    if (p != q) w.hess.row(q * d_ + p).head(n) = hs;
  }
}

void IcnnKernel::backward(Work& w, const double* fbar, const double* Psibar, const double* Mbar,
                          double* gtheta_out) const {
  const int n = w.n;
  const int lt = layers_ - 1;
  w.gbuf.setZero();
  double* gtheta = w.gbuf.data();
  for (int l = 0; l < layers_; ++l) {
    w.Zb[l].leftCols(n).setZero();
    w.Gb[l].leftCols(d_ * n).setZero();
    w.Hb[l].leftCols(ds_ * n).setZero();
  }
  VecMap wout(theta_ + out_w_off_, width_);
  MutVecMap wout_bar(gtheta + out_w_off_, width_);
  MutVecMap aout_bar(gtheta + out_a_off_, d_);

  if (fbar) {
    for (int i = 0; i < n; ++i) {
      if (fbar[i] == 0.0) continue;
      w.Zb[lt].col(i) = fbar[i] * wout;
      wout_bar.noalias() += fbar[i] * w.Z[lt].col(i);
      aout_bar.noalias() += fbar[i] * w.Xc.col(i).head(d_);
      gtheta[out_b_off_] += fbar[i];
    }
  }
  if (Psibar) {
    for (int j = 0; j < d_; ++j) {
      auto gbj = w.Gb[lt].middleCols(j * n, n);
      auto gj = w.G[lt].middleCols(j * n, n);
      for (int i = 0; i < n; ++i) {
        const double pij = Psibar[i * static_cast<std::ptrdiff_t>(d_) + j];
        if (pij == 0.0) continue;
        gbj.col(i) += pij * wout;
        wout_bar.noalias() += pij * gj.col(i);
        aout_bar[j] += pij;
      }
    }
  }
  if (Mbar) {
    for (int s = 0; s < ds_; ++s) {
      const int p = sym_p_[s], q = sym_q_[s];
      auto hbs = w.Hb[lt].middleCols(s * n, n);
      auto hs = w.H[lt].middleCols(s * n, n);
      for (int i = 0; i < n; ++i) {
        const double* mi = Mbar + i * static_cast<std::ptrdiff_t>(d_) * d_;
        const double ms = (p == q) ? mi[p * d_ + q] : mi[p * d_ + q] + mi[q * d_ + p];
        if (ms == 0.0) continue;
        hbs.col(i) += ms * wout;
        wout_bar.noalias() += ms * hs.col(i);
      }
    }
  }

  for (int l = lt; l >= 0; --l) {
    auto Ub = w.Ub.leftCols(n);
    Ub.array() = w.D1[l].leftCols(n).array() * w.Zb[l].leftCols(n).array();
    for (int j = 0; j < d_; ++j)
      Ub.array() += w.D2[l].leftCols(n).array() * w.GU[l].middleCols(j * n, n).array() *
                    w.Gb[l].middleCols(j * n, n).array();
    for (int s = 0; s < ds_; ++s) {
      Ub.array() += w.D3[l].leftCols(n).array() * w.GU[l].middleCols(sym_p_[s] * n, n).array() *
                    w.GU[l].middleCols(sym_q_[s] * n, n).array() *
                    w.Hb[l].middleCols(s * n, n).array();
      if (l > 0)
        Ub.array() += w.D2[l].leftCols(n).array() * w.HU[l].middleCols(s * n, n).array() *
                      w.Hb[l].middleCols(s * n, n).array();
    }
    for (int j = 0; j < d_; ++j) {
      auto gub = w.GUb.middleCols(j * n, n);
      gub.array() = w.D1[l].leftCols(n).array() * w.Gb[l].middleCols(j * n, n).array();
    }
    for (int s = 0; s < ds_; ++s) {
      const int p = sym_p_[s], q = sym_q_[s];
      w.GUb.middleCols(p * n, n).array() += w.D2[l].leftCols(n).array() *
                                            w.GU[l].middleCols(q * n, n).array() *
                                            w.Hb[l].middleCols(s * n, n).array();
      w.GUb.middleCols(q * n, n).array() += w.D2[l].leftCols(n).array() *
                                            w.GU[l].middleCols(p * n, n).array() *
                                            w.Hb[l].middleCols(s * n, n).array();
    }
    if (l > 0)
      for (int s = 0; s < ds_; ++s)
        w.HUb.middleCols(s * n, n).array() =
            w.D1[l].leftCols(n).array() * w.Hb[l].middleCols(s * n, n).array();

    auto Abar = wt_mut(gtheta, a_off_[l], width_, d_);
    MutVecMap bbar(gtheta + b_off_[l], width_);
    bbar.noalias() += Ub.rowwise().sum();
    Abar.noalias() += w.Xc.leftCols(n) * Ub.transpose();
    for (int j = 0; j < d_; ++j)
      Abar.row(j).noalias() += w.GUb.middleCols(j * n, n).rowwise().sum().transpose();
    if (l > 0) {
      auto W = wt(theta_, w_off_[l], width_, width_);
      auto Wbar = wt_mut(gtheta, w_off_[l], width_, width_);
      Wbar.noalias() += w.Z[l - 1].leftCols(n) * Ub.transpose();
      Wbar.noalias() += w.G[l - 1].leftCols(d_ * n) * w.GUb.leftCols(d_ * n).transpose();
      Wbar.noalias() += w.H[l - 1].leftCols(ds_ * n) * w.HUb.leftCols(ds_ * n).transpose();
      w.Zb[l - 1].leftCols(n).noalias() += W * Ub;
      w.Gb[l - 1].leftCols(d_ * n).noalias() += W * w.GUb.leftCols(d_ * n);
      w.Hb[l - 1].leftCols(ds_ * n).noalias() += W * w.HUb.leftCols(ds_ * n);
    }
  }
  for (int i = 0; i < n_params_; ++i) gtheta_out[i] += gtheta[i];
}

void IcnnKernel::eval_all(const double* X, int n, double* f, double* map, double* hess) const {
  const int nc = n_chunks(n);
#pragma omp parallel
  {
    Work& w = pooled_work();
#pragma omp for schedule(static)
    for (int cidx = 0; cidx < nc; ++cidx) {
      const int i0 = cidx * kChunk;
      const int len = std::min(kChunk, n - i0);
      forward(w, X + static_cast<std::ptrdiff_t>(i0) * d_, len);
      for (int i = 0; i < len; ++i) {
        if (f) f[i0 + i] = w.f[i];
        if (map)
          for (int j = 0; j < d_; ++j)
            map[(i0 + i) * static_cast<std::ptrdiff_t>(d_) + j] = w.map(j, i);
        if (hess)
          for (int s = 0; s < d_ * d_; ++s)
            hess[(i0 + i) * static_cast<std::ptrdiff_t>(d_) * d_ + s] = w.hess(s, i);
      }
    }
  }
}

}  // namespace evnn
