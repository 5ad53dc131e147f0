#pragma once

// Reverse-mode automatic differentiation over complex matrices, recorded on a
// tape. Complex scalars are treated as (re, im) real pairs: every adjoint is
// the pair of partial derivatives of the (real) loss with respect to the re
// and im slots, packed back into a complex matrix. With that packing the
// adjoint of a complex product y = a*b is the familiar
//   a_bar += y_bar * conj(b),   b_bar += conj(a) * y_bar,
// i.e. the real 2x2-block representation of complex multiplication.
//
// The op set is exactly what iterating x_{t+1} = f(Phi Lambda Phi^{-1} x_t)
// needs; this is not a general-purpose AD library.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "crsn/errors.hpp"

namespace crsn {

using Cplx = std::complex<double>;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

// Relative pivot tolerance below which a basis is treated as singular.
inline constexpr double kSingularPivotRel = 1e-12;

// LU factorization of a square complex matrix with partial pivoting, plus
// (optionally) the factorization of its conjugate transpose. The second
// factorization exists so the reverse pass can solve against A^H through the
// fast forward-substitution path instead of Eigen's slower transposed solve.
struct PhiFactor {
  Eigen::PartialPivLU<CMat> lu;
  Eigen::PartialPivLU<CMat> lu_adjoint;
  bool has_adjoint = false;
  Eigen::Index n = 0;
  double max_abs = 0.0;

  static std::shared_ptr<const PhiFactor> build(const CMat& a,
                                                bool with_adjoint) {
    if (a.rows() != a.cols())
      throw ConfigInvalid("factorization requires a square matrix");
    auto f = std::make_shared<PhiFactor>();
    f->n = a.rows();
    f->max_abs = a.cwiseAbs().maxCoeff();
    if (with_adjoint) {
      // The reverse pass needs the factorization of a^H as well; the two
      // factorizations are independent, so overlap them.
      std::thread adj([&] { f->lu_adjoint.compute(a.adjoint()); });
      f->lu.compute(a);
      adj.join();
      f->has_adjoint = true;
    } else {
      f->lu.compute(a);
    }
    const auto& diag = f->lu.matrixLU().diagonal();
    for (Eigen::Index i = 0; i < f->n; ++i) {
      if (std::abs(diag(i)) < kSingularPivotRel * f->max_abs ||
          f->max_abs == 0.0) {
        throw SingularBasis(static_cast<int>(i),
                            "singular basis: pivot " + std::to_string(i) +
                                " below tolerance (|pivot|=" +
                                std::to_string(std::abs(diag(i))) + ")");
      }
    }
    return f;
  }

  CMat solve(const CMat& b) const { return lu.solve(b); }

  // Solves A^H w = b.
  CMat solve_adjoint(const CMat& b) const {
    if (has_adjoint) return lu_adjoint.solve(b);
    return lu.adjoint().solve(b);
  }
};

enum class OpKind : std::uint8_t {
  Leaf,
  MatMul,         // y = a * b
  Solve,          // u solves a * u = b (LU with partial pivoting)
  SplitTanh,      // tanh on re and im of the first n rows, identity below
  SpectralScale,  // y = diag([fixed; tanh(rho)]) * x
  AssembleBasis,  // phi = [fixed_block | trainable]
  RealComponent,  // r = Re(x[index]) of a column vector
  SseRow,         // s = sum_b (Re(x(row, b)) - target_b)^2
  Add,            // z = a + b
  ScaleReal,      // z = alpha * x, alpha a real constant
};

class Tape;

// Handle to a value recorded on a tape.
struct CVar {
  Tape* tape = nullptr;
  int id = -1;
  Eigen::Index rows = 0, cols = 0;

  bool valid() const { return tape != nullptr && id >= 0; }
  const CMat& value() const;
};

// Gradients of a scalar loss with respect to every trainable parameter
// registered on the tape, packed as complex matrices of the parameter's
// shape. Slot numbering: a complex parameter with S scalars (column-major)
// exposes 2 slots per scalar, slot 2k = re, slot 2k+1 = im; a real-valued
// parameter exposes 1 slot per scalar. Parameters that do not influence the
// loss carry exactly-zero gradients.
struct Gradients {
  struct Entry {
    CMat grad;
    bool real_only = false;
  };
  std::map<int, Entry> by_parameter;

  std::size_t slot_count(int param_id) const {
    const Entry& e = by_parameter.at(param_id);
    const std::size_t s = static_cast<std::size_t>(e.grad.size());
    return e.real_only ? s : 2 * s;
  }

  double slot(int param_id, std::size_t k) const {
    const Entry& e = by_parameter.at(param_id);
    if (e.real_only) return e.grad(static_cast<Eigen::Index>(k)).real();
    const Eigen::Index scalar = static_cast<Eigen::Index>(k / 2);
    return (k % 2 == 0) ? e.grad(scalar).real() : e.grad(scalar).imag();
  }

  // Merge by summation; shard merges are associative up to floating point.
  void accumulate(const Gradients& other) {
    for (const auto& [pid, entry] : other.by_parameter) {
      auto it = by_parameter.find(pid);
      if (it == by_parameter.end()) {
        by_parameter.emplace(pid, entry);
      } else {
        it->second.grad += entry.grad;
      }
    }
  }

  void scale(double a) {
    for (auto& [pid, entry] : by_parameter) entry.grad *= a;
  }

  bool all_finite(int* bad_param = nullptr, std::size_t* bad_slot = nullptr) const {
    for (const auto& [pid, entry] : by_parameter) {
      const auto* d = reinterpret_cast<const double*>(entry.grad.data());
      const std::size_t n = 2 * static_cast<std::size_t>(entry.grad.size());
      for (std::size_t k = 0; k < n; ++k) {
        if (!std::isfinite(d[k])) {
          if (bad_param) *bad_param = pid;
          if (bad_slot) *bad_slot = entry.real_only ? k / 2 : k;
          return false;
        }
      }
    }
    return true;
  }
};

// Append-only record of forward operations. Node ids are strictly increasing
// in recording order; backward() accumulates adjoints in strict reverse id
// order. Single-writer: one tape per worker thread.
class Tape {
 public:
  struct Node {
    OpKind kind;
    int a = -1, b = -1;
    CMat value;
    int param_id = -1;
    bool real_only = false;
    int n_nonlinear = 0;                        // SplitTanh
    Eigen::Index index = 0;                     // RealComponent / SseRow row
    double alpha = 1.0;                         // ScaleReal
    RVec targets;                               // SseRow
    CVec fixed_scale;                           // SpectralScale
    CMat fixed_block;                           // AssembleBasis
    std::shared_ptr<const PhiFactor> factor;    // Solve
  };

  // Test hook: multiplies the tanh adjoint by this factor. Leave at 1.0;
  // gradcheck's negative control sets it to verify the checker can fail.
  double debug_tanh_adjoint_scale = 1.0;

  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return nodes_.size(); }
  int parameter_count() const { return static_cast<int>(params_.size()); }

  void reset() {
    nodes_.clear();
    params_.clear();
    factor_cache_.clear();
    consumed_ = false;
  }

  // Records a complex matrix leaf. Trainable leaves are assigned the next
  // parameter id (2 gradient slots per scalar).
  CVar cvar(const CMat& values, bool trainable = false) {
    check_open();
    require_nonempty(values);
    require_finite(values);
    Node n;
    n.kind = OpKind::Leaf;
    n.value = values;
    if (trainable) {
      n.param_id = static_cast<int>(params_.size());
      params_.push_back({static_cast<int>(nodes_.size()), false});
    }
    return push(std::move(n));
  }

  // Real-valued leaf (imaginary parts identically zero, 1 slot per scalar).
  CVar cvar_real(const RVec& values, bool trainable = false) {
    check_open();
    CMat v = values.cast<Cplx>();
    require_nonempty(v);
    require_finite(v);
    Node n;
    n.kind = OpKind::Leaf;
    n.value = std::move(v);
    n.real_only = true;
    if (trainable) {
      n.param_id = static_cast<int>(params_.size());
      params_.push_back({static_cast<int>(nodes_.size()), true});
    }
    return push(std::move(n));
  }

  CVar cmatmul(CVar a, CVar b) {
    check_open();
    check_same_tape(a);
    check_same_tape(b);
    if (a.cols != b.rows)
      throw ConfigInvalid("cmatmul: shape mismatch (" + shape_str(a) + " * " +
                          shape_str(b) + ")");
    Node n;
    n.kind = OpKind::MatMul;
    n.a = a.id;
    n.b = b.id;
    n.value.noalias() = value(a.id) * value(b.id);
    return push(std::move(n));
  }

  // Solves a * u = b without forming a^{-1}. The LU factorization of a is
  // cached on the tape keyed by a's node id and reused by every solve against
  // the same node within this pass. A caller that already factored the same
  // matrix (e.g. once per optimizer step, shared across worker tapes) may
  // supply the factorization; it must have been built from a's exact value.
  CVar csolve(CVar a, CVar b,
              std::shared_ptr<const PhiFactor> shared = nullptr) {
    check_open();
    check_same_tape(a);
    check_same_tape(b);
    if (a.rows != a.cols)
      throw ConfigInvalid("csolve: matrix must be square, got " + shape_str(a));
    if (b.rows != a.rows)
      throw ConfigInvalid("csolve: rhs rows " + std::to_string(b.rows) +
                          " != n " + std::to_string(a.rows));
    std::shared_ptr<const PhiFactor> f;
    if (auto it = factor_cache_.find(a.id); it != factor_cache_.end()) {
      f = it->second;
    } else {
      if (shared) {
        if (shared->n != a.rows)
          throw ConfigInvalid("csolve: shared factorization has wrong size");
        f = std::move(shared);
      } else {
        f = PhiFactor::build(value(a.id), /*with_adjoint=*/true);
      }
      factor_cache_.emplace(a.id, f);
    }
    Node n;
    n.kind = OpKind::Solve;
    n.a = a.id;
    n.b = b.id;
    n.factor = f;
    n.value = f->solve(value(b.id));
    return push(std::move(n));
  }

  // Applies tanh separately to the real and imaginary part of the first
  // n_nonlinear rows of each column; rows beyond pass through unchanged.
  CVar split_tanh(CVar x, Eigen::Index n_nonlinear) {
    check_open();
    check_same_tape(x);
    if (n_nonlinear < 0 || n_nonlinear > x.rows)
      throw ConfigInvalid("split_tanh: n_nonlinear out of range");
    Node n;
    n.kind = OpKind::SplitTanh;
    n.a = x.id;
    n.n_nonlinear = static_cast<int>(n_nonlinear);
    n.value = value(x.id);
    for (Eigen::Index c = 0; c < n.value.cols(); ++c) {
      auto* col = reinterpret_cast<double*>(n.value.col(c).data());
      for (Eigen::Index i = 0; i < 2 * n_nonlinear; ++i)
        col[i] = std::tanh(col[i]);  // re and im slots interleave
    }
    return push(std::move(n));
  }

  // y_i = lambda_i * x_i with lambda = [fixed ; tanh(rho)]. fixed holds the
  // frozen complex eigenvalues; rho is a real column vector (typically a
  // trainable leaf). Adjoint cost is O(size of x).
  CVar spectral_scale(CVar x, CVar rho, const CVec& fixed) {
    check_open();
    check_same_tape(x);
    check_same_tape(rho);
    const Node& rn = node(rho.id);
    if (!rn.real_only)
      throw ConfigInvalid("spectral_scale: rho must be a real-valued node");
    if (rho.cols != 1 || fixed.size() + rho.rows != x.rows)
      throw ConfigInvalid("spectral_scale: eigenvalue count " +
                          std::to_string(fixed.size() + rho.rows) +
                          " != state rows " + std::to_string(x.rows));
    Node n;
    n.kind = OpKind::SpectralScale;
    n.a = x.id;
    n.b = rho.id;
    n.fixed_scale = fixed;
    n.value = lambda_of(fixed, rn.value).asDiagonal() * value(x.id);
    return push(std::move(n));
  }

  // phi = [fixed_block | trainable], fixed columns first.
  CVar assemble_basis(CVar trainable, const CMat& fixed_block) {
    check_open();
    check_same_tape(trainable);
    if (fixed_block.rows() != trainable.rows)
      throw ConfigInvalid("assemble_basis: row mismatch");
    Node n;
    n.kind = OpKind::AssembleBasis;
    n.a = trainable.id;
    n.fixed_block = fixed_block;
    n.value.resize(trainable.rows, fixed_block.cols() + trainable.cols);
    n.value.leftCols(fixed_block.cols()) = fixed_block;
    n.value.rightCols(trainable.cols) = value(trainable.id);
    return push(std::move(n));
  }

  // Extracts Re(x[index]) of a column vector as a differentiable scalar.
  CVar real_component(CVar x, Eigen::Index index) {
    check_open();
    check_same_tape(x);
    if (x.cols != 1)
      throw ConfigInvalid("real_component: x must be a column vector");
    if (index < 0 || index >= x.rows)
      throw ConfigInvalid("real_component: index " + std::to_string(index) +
                          " out of range [0," + std::to_string(x.rows) + ")");
    Node n;
    n.kind = OpKind::RealComponent;
    n.a = x.id;
    n.index = index;
    n.value = CMat::Constant(1, 1, Cplx(value(x.id)(index, 0).real(), 0.0));
    n.real_only = true;
    return push(std::move(n));
  }

  // s = sum_b (Re(x(row, b)) - targets[b])^2; the squared-error contribution
  // of one time step across a batch of columns.
  CVar sse_row(CVar x, Eigen::Index row, const RVec& targets) {
    check_open();
    check_same_tape(x);
    if (row < 0 || row >= x.rows)
      throw ConfigInvalid("sse_row: row out of range");
    if (targets.size() != x.cols)
      throw ConfigInvalid("sse_row: " + std::to_string(targets.size()) +
                          " targets for " + std::to_string(x.cols) +
                          " columns");
    Node n;
    n.kind = OpKind::SseRow;
    n.a = x.id;
    n.index = row;
    n.targets = targets;
    const CMat& xv = value(x.id);
    double sse = 0.0;
    for (Eigen::Index c = 0; c < x.cols; ++c) {
      const double r = xv(row, c).real() - targets(c);
      sse += r * r;
    }
    n.value = CMat::Constant(1, 1, Cplx(sse, 0.0));
    n.real_only = true;
    return push(std::move(n));
  }

  CVar add(CVar a, CVar b) {
    check_open();
    check_same_tape(a);
    check_same_tape(b);
    if (a.rows != b.rows || a.cols != b.cols)
      throw ConfigInvalid("add: shape mismatch");
    Node n;
    n.kind = OpKind::Add;
    n.a = a.id;
    n.b = b.id;
    n.value = value(a.id) + value(b.id);
    n.real_only = node(a.id).real_only && node(b.id).real_only;
    return push(std::move(n));
  }

  CVar scale_real(CVar x, double alpha) {
    check_open();
    check_same_tape(x);
    Node n;
    n.kind = OpKind::ScaleReal;
    n.a = x.id;
    n.alpha = alpha;
    n.value = alpha * value(x.id);
    n.real_only = node(x.id).real_only;
    return push(std::move(n));
  }

  // Reverse sweep from a real scalar loss. Returns gradients for every
  // registered trainable parameter (exact zeros for parameters off the loss
  // path). The tape is marked consumed; reset() before recording again.
  Gradients backward(CVar loss) {
    check_open();
    check_same_tape(loss);
    if (loss.rows != 1 || loss.cols != 1)
      throw ConfigInvalid("backward: loss must be a 1x1 scalar");
    if (value(loss.id)(0, 0).imag() != 0.0)
      throw ConfigInvalid("backward: loss must be real-valued");
    consumed_ = true;

    std::vector<CMat> adj(nodes_.size());
    std::vector<OuterAcc> pending(nodes_.size());
    adj[static_cast<std::size_t>(loss.id)] = CMat::Constant(1, 1, Cplx(1, 0));

    Gradients grads;
    for (int id = loss.id; id >= 0; --id) {
      const std::size_t k = static_cast<std::size_t>(id);
      Node& n = nodes_[k];
      flush_pending(pending[k], adj[k], n.value);
      if (adj[k].size() == 0) continue;  // node not on the loss path
      CMat& g = adj[k];
      switch (n.kind) {
        case OpKind::Leaf:
          if (n.param_id >= 0) {
            grads.by_parameter[n.param_id] = {std::move(g), n.real_only};
          }
          break;
        case OpKind::MatMul: {
          // a_bar += g * b^H (deferred GEMM), b_bar += a^H * g.
          ensure(adj[sz(n.b)], nodes_[sz(n.b)].value);
          adj[sz(n.b)].noalias() += nodes_[sz(n.a)].value.adjoint() * g;
          pending[sz(n.a)].push(std::move(g), &nodes_[sz(n.b)].value, +1.0);
          break;
        }
        case OpKind::Solve: {
          // w = a^{-H} u_bar;  b_bar += w;  a_bar -= w * u^H.
          CMat w = n.factor->solve_adjoint(g);
          ensure(adj[sz(n.b)], nodes_[sz(n.b)].value);
          adj[sz(n.b)] += w;
          pending[sz(n.a)].push(std::move(w), &n.value, -1.0);
          break;
        }
        case OpKind::SplitTanh: {
          // d tanh = 1 - tanh^2, applied per real slot; identity tail.
          const Eigen::Index m = n.n_nonlinear;
          CMat& x_adj = ensure(adj[sz(n.a)], nodes_[sz(n.a)].value);
          const double h = debug_tanh_adjoint_scale;
          const Eigen::Index two_rows = 2 * x_adj.rows();
          for (Eigen::Index c = 0; c < x_adj.cols(); ++c) {
            auto* xa = reinterpret_cast<double*>(x_adj.col(c).data());
            const auto* gv = reinterpret_cast<const double*>(g.col(c).data());
            const auto* yv =
                reinterpret_cast<const double*>(n.value.col(c).data());
            for (Eigen::Index i = 0; i < 2 * m; ++i)
              xa[i] += h * gv[i] * (1.0 - yv[i] * yv[i]);
            for (Eigen::Index i = 2 * m; i < two_rows; ++i) xa[i] += gv[i];
          }
          break;
        }
        case OpKind::SpectralScale: {
          const Node& rho_node = nodes_[sz(n.b)];
          const CVec lambda = lambda_of(n.fixed_scale, rho_node.value);
          CMat& x_adj = ensure(adj[sz(n.a)], nodes_[sz(n.a)].value);
          x_adj += lambda.conjugate().asDiagonal() * g;
          const Eigen::Index m = n.fixed_scale.size();
          const Eigen::Index r = rho_node.value.rows();
          CMat& rho_adj = ensure(adj[sz(n.b)], rho_node.value);
          const auto& x_val = nodes_[sz(n.a)].value;
          for (Eigen::Index j = 0; j < r; ++j) {
            const double lam = lambda(m + j).real();
            double re_dot = 0.0;
            for (Eigen::Index c = 0; c < g.cols(); ++c) {
              const Cplx gb = g(m + j, c), xb = x_val(m + j, c);
              re_dot += gb.real() * xb.real() + gb.imag() * xb.imag();
            }
            rho_adj(j, 0) += Cplx((1.0 - lam * lam) * re_dot, 0.0);
          }
          break;
        }
        case OpKind::AssembleBasis: {
          CMat& t_adj = ensure(adj[sz(n.a)], nodes_[sz(n.a)].value);
          t_adj += g.rightCols(t_adj.cols());
          break;
        }
        case OpKind::RealComponent: {
          CMat& x_adj = ensure(adj[sz(n.a)], nodes_[sz(n.a)].value);
          x_adj(n.index, 0) += Cplx(g(0, 0).real(), 0.0);
          break;
        }
        case OpKind::SseRow: {
          CMat& x_adj = ensure(adj[sz(n.a)], nodes_[sz(n.a)].value);
          const auto& x_val = nodes_[sz(n.a)].value;
          const double s = 2.0 * g(0, 0).real();
          for (Eigen::Index c = 0; c < x_adj.cols(); ++c)
            x_adj(n.index, c) +=
                Cplx(s * (x_val(n.index, c).real() - n.targets(c)), 0.0);
          break;
        }
        case OpKind::Add: {
          ensure(adj[sz(n.a)], nodes_[sz(n.a)].value) += g;
          ensure(adj[sz(n.b)], nodes_[sz(n.b)].value) += g;
          break;
        }
        case OpKind::ScaleReal: {
          ensure(adj[sz(n.a)], nodes_[sz(n.a)].value) += n.alpha * g;
          break;
        }
      }
      g.resize(0, 0);  // free as soon as the node is processed
    }

    // Parameters the loss never touched get exact-zero gradients.
    for (std::size_t p = 0; p < params_.size(); ++p) {
      const int pid = static_cast<int>(p);
      if (!grads.by_parameter.count(pid)) {
        const Node& leaf = nodes_[sz(params_[p].node_id)];
        grads.by_parameter[pid] = {CMat::Zero(leaf.value.rows(), leaf.value.cols()),
                                   params_[p].real_only};
      }
    }
    return grads;
  }

 private:
  struct ParamRec {
    int node_id;
    bool real_only;
  };

  // Deferred rank-k accumulations adj[target] += sum_i sign_i * y_i * v_i^H,
  // flushed as a single GEMM when the target node is visited.
  struct OuterAcc {
    std::vector<CMat> ys;
    std::vector<const CMat*> vs;
    std::vector<double> signs;
    Eigen::Index cols_total = 0;

    void push(CMat y, const CMat* v, double sign) {
      cols_total += y.cols();
      ys.push_back(std::move(y));
      vs.push_back(v);
      signs.push_back(sign);
    }
  };

  static std::size_t sz(int id) { return static_cast<std::size_t>(id); }

  const CMat& value(int id) const { return nodes_[sz(id)].value; }

  static CMat& ensure(CMat& slot, const CMat& like) {
    if (slot.size() == 0) slot = CMat::Zero(like.rows(), like.cols());
    return slot;
  }

  void flush_pending(OuterAcc& acc, CMat& slot, const CMat& like) {
    if (acc.ys.empty()) return;
    CMat& out = ensure(slot, like);
    const Eigen::Index n = out.rows();
    CMat ycat(n, acc.cols_total), vcat(n, acc.cols_total);
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < acc.ys.size(); ++i) {
      const Eigen::Index w = acc.ys[i].cols();
      ycat.middleCols(at, w) = acc.signs[i] * acc.ys[i];
      vcat.middleCols(at, w) = *acc.vs[i];
      at += w;
    }
    out.noalias() += ycat * vcat.adjoint();
    acc = OuterAcc{};
  }

  static CVec lambda_of(const CVec& fixed, const CMat& rho_value) {
    CVec lambda(fixed.size() + rho_value.rows());
    lambda.head(fixed.size()) = fixed;
    for (Eigen::Index j = 0; j < rho_value.rows(); ++j)
      lambda(fixed.size() + j) = Cplx(std::tanh(rho_value(j, 0).real()), 0.0);
    return lambda;
  }

  CVar push(Node&& n) {
    nodes_.push_back(std::move(n));
    const Node& stored = nodes_.back();
    return CVar{this, static_cast<int>(nodes_.size()) - 1, stored.value.rows(),
                stored.value.cols()};
  }

  void check_open() const {
    if (consumed_)
      throw ConfigInvalid("tape already consumed by backward(); reset() first");
  }

  void check_same_tape(CVar v) const {
    if (v.tape != this || v.id < 0 ||
        v.id >= static_cast<int>(nodes_.size()))
      throw ConfigInvalid("operand does not belong to this tape");
  }

  static void require_nonempty(const CMat& v) {
    if (v.rows() == 0 || v.cols() == 0)
      throw ConfigInvalid("empty matrix is not a valid tape value");
  }

  static void require_finite(const CMat& v) {
    const auto* d = reinterpret_cast<const double*>(v.data());
    for (std::size_t k = 0; k < 2 * static_cast<std::size_t>(v.size()); ++k) {
      if (!std::isfinite(d[k])) {
        const std::size_t scalar = k / 2;
        throw ConfigInvalid(
            "non-finite input at entry " + std::to_string(scalar) + " (" +
            (k % 2 == 0 ? "re" : "im") + ") of a tape leaf");
      }
    }
  }

  static std::string shape_str(CVar v) {
    return std::to_string(v.rows) + "x" + std::to_string(v.cols);
  }

  std::vector<Node> nodes_;
  std::vector<ParamRec> params_;
  std::unordered_map<int, std::shared_ptr<const PhiFactor>> factor_cache_;
  bool consumed_ = false;

  friend struct CVar;
};

inline const CMat& CVar::value() const { return tape->node(id).value; }

}  // namespace crsn
