#include "mrmpc/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace mrmpc {

namespace {

class CondensedSolver {
 public:
  explicit CondensedSolver(const JointOcp& p) : p_(p), np_(p.horizon()) {
    const int nb = p_.block_count();
    n_.resize(nb);
    u_offset_.resize(nb);
    u_dim_ = 0;
    for (int b = 0; b < nb; ++b) {
      n_[b] = p_.block(b).model->joint_count();
      u_offset_[b] = u_dim_;
      u_dim_ += np_ * n_[b];
    }
    u_lo_.resize(u_dim_);
    u_hi_.resize(u_dim_);
    for (int b = 0; b < nb; ++b) {
      const auto& umax = p_.block(b).config.bounds.u_max;
      for (int k = 0; k < np_; ++k) {
        u_lo_.segment(input_index(b, k), n_[b]) = -umax;
        u_hi_.segment(input_index(b, k), n_[b]) = umax;
      }
    }
    // AL row layout: collision, static, state boxes (k = 1..Np-1).
    state_box_offset_ = p_.collision_row_count() + p_.static_row_count();
    al_rows_ = state_box_offset_;
    for (int b = 0; b < nb; ++b) al_rows_ += (np_ - 1) * 4 * n_[b];

    p_.init_workspace(ws_);
    states_.resize(nb);
    inputs_.resize(nb);
    for (int b = 0; b < nb; ++b) {
      states_[b].assign(np_ + 1, JointState(n_[b]));
      inputs_[b].assign(np_, Eigen::VectorXd::Zero(n_[b]));
    }
  }

  int input_index(int b, int k) const { return u_offset_[b] + k * n_[b]; }

  Eigen::VectorXd clamp(const Eigen::VectorXd& u) const {
    return u.cwiseMax(u_lo_).cwiseMin(u_hi_);
  }

  void rollout_states(const Eigen::VectorXd& u) {
    for (int b = 0; b < p_.block_count(); ++b) {
      const auto& dyn = p_.block(b).config.dyn;
      states_[b][0] = p_.block(b).x_start;
      for (int k = 0; k < np_; ++k) {
        inputs_[b][k] = u.segment(input_index(b, k), n_[b]);
        states_[b][k + 1] = dyn.step(states_[b][k], inputs_[b][k]);
      }
    }
  }

  // Inequality values in c <= 0 convention (negated margins; state boxes).
  void constraint_values(Eigen::VectorXd& c) const {
    c.resize(al_rows_);
    int row = 0;
    for (int i = 0; i < p_.collision_row_count(); ++i)
      c[row++] = p_.block(p_.collision_rows()[i].seg_block)
                     .config.margin_epsilon -
                 ws_.collision_margin[i];
    for (int i = 0; i < p_.static_row_count(); ++i)
      c[row++] = -ws_.static_margin[i];
    for (int b = 0; b < p_.block_count(); ++b) {
      const auto& bounds = p_.block(b).config.bounds;
      for (int k = 1; k < np_; ++k) {
        const auto& x = states_[b][k];
        for (int j = 0; j < n_[b]; ++j) {
          c[row++] = bounds.q_min[j] - x.q[j];
          c[row++] = x.q[j] - bounds.q_max[j];
          c[row++] = -x.qd[j] - bounds.qd_max[j];
          c[row++] = x.qd[j] - bounds.qd_max[j];
        }
      }
    }
  }

  double objective() const { return p_.objective_value(states_, inputs_); }

  // Objective cotangents on states plus direct input gradient.
  void objective_gradient_u(Eigen::VectorXd& grad) const {
    grad.setZero(u_dim_);
    for (int b = 0; b < p_.block_count(); ++b) {
      const auto& blk = p_.block(b);
      const auto& w = blk.config.weights;
      const double ts = blk.config.ts;
      const int n = n_[b];
      // Backward recursion over the rollout sensitivities.
      Eigen::VectorXd s = Eigen::VectorXd::Zero(2 * n);
      for (int j = np_ - 1; j >= 0; --j) {
        // s <- A^T s + dJ/dx^{j+1}
        s.segment(n, n) += ts * s.head(n);
        const Eigen::VectorXd e =
            states_[b][j + 1].stacked() - blk.x_goal.stacked();
        s += 2.0 * ((j + 1 == np_) ? w.qf : w.qx).cwiseProduct(e);
        grad.segment(input_index(b, j), n) +=
            0.5 * ts * ts * s.head(n) + ts * s.segment(n, n);
      }
      for (int k = 0; k < np_; ++k)
        grad.segment(input_index(b, k), n) +=
            2.0 * w.ru.cwiseProduct(inputs_[b][k]);
      for (int k = 0; k + 1 < np_; ++k) {
        const Eigen::VectorXd g =
            2.0 * w.rd.cwiseProduct(inputs_[b][k + 1] - inputs_[b][k]) /
            (ts * ts);
        grad.segment(input_index(b, k), n) -= g;
        grad.segment(input_index(b, k + 1), n) += g;
      }
      grad.segment(input_index(b, 0), n) +=
          2.0 * w.rd.cwiseProduct(inputs_[b][0] - blk.u_prev) / (ts * ts);
    }
  }

  // Gradient row of one AL constraint in input space, from a cotangent w on
  // x_b^k: d/du^j = B^T (A^T)^(k-1-j) w, closed form per joint.
  void add_state_cotangent(int b, int k, const Eigen::VectorXd& w,
                           Eigen::VectorXd& row) const {
    const double ts = p_.block(b).config.ts;
    const int n = n_[b];
    for (int j = 0; j < k; ++j) {
      const double pos_factor = ts * ts * (static_cast<double>(k - j) - 0.5);
      for (int joint = 0; joint < n; ++joint)
        row[input_index(b, j) + joint] +=
            w[joint] * pos_factor + w[n + joint] * ts;
    }
  }

  // Dense u-space gradient of AL row i (row must be zero on entry).
  void constraint_gradient_row(int i, Eigen::VectorXd& row) const {
    if (i < p_.collision_row_count()) {
      const auto& ref = p_.collision_rows()[i];
      const int n = n_[ref.seg_block];
      Eigen::VectorXd w = Eigen::VectorXd::Zero(2 * n);
      w.head(n) = -ws_.collision_grad_seg[i];
      add_state_cotangent(ref.seg_block, ref.k, w, row);
      if (!ref.frozen) {
        const int ne = n_[ref.source];
        Eigen::VectorXd we = Eigen::VectorXd::Zero(2 * ne);
        we.head(ne) = -ws_.collision_grad_ell[i];
        add_state_cotangent(ref.source, ref.k, we, row);
      }
      return;
    }
    if (i < state_box_offset_) {
      const int s = i - p_.collision_row_count();
      const auto& ref = p_.static_rows()[s];
      const int n = n_[ref.block];
      Eigen::VectorXd w = Eigen::VectorXd::Zero(2 * n);
      w.head(n) = -ws_.static_grad[s];
      add_state_cotangent(ref.block, ref.k, w, row);
      return;
    }
    // State box rows: 4 per joint per step, in constraint_values order.
    int r = i - state_box_offset_;
    for (int b = 0; b < p_.block_count(); ++b) {
      const int per_block = (np_ - 1) * 4 * n_[b];
      if (r >= per_block) {
        r -= per_block;
        continue;
      }
      const int n = n_[b];
      const int k = 1 + r / (4 * n);
      const int within = r % (4 * n);
      const int joint = within / 4;
      const int kind = within % 4;
      Eigen::VectorXd w = Eigen::VectorXd::Zero(2 * n);
      switch (kind) {
        case 0: w[joint] = -1.0; break;          // q_min - q
        case 1: w[joint] = 1.0; break;           // q - q_max
        case 2: w[n + joint] = -1.0; break;      // -qd - qd_max
        case 3: w[n + joint] = 1.0; break;       // qd - qd_max
      }
      add_state_cotangent(b, k, w, row);
      return;
    }
  }

  JointSolveResult solve(const std::vector<std::vector<ControlInput>>* warm) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& opts = p_.block(0).config.solver;

    Eigen::VectorXd u = Eigen::VectorXd::Zero(u_dim_);
    if (warm != nullptr && static_cast<int>(warm->size()) == p_.block_count()) {
      for (int b = 0; b < p_.block_count(); ++b)
        for (int k = 0; k < np_ && k < static_cast<int>((*warm)[b].size()); ++k)
          u.segment(input_index(b, k), n_[b]) = (*warm)[b][k];
      u = clamp(u);
    }

    Eigen::VectorXd mu = Eigen::VectorXd::Zero(al_rows_);
    double rho = 10.0;
    double omega = std::max(1e-2, opts.stationarity_tol);

    build_quadratic_hessian();

    SolveStats stats;
    Eigen::VectorXd c(al_rows_), grad(u_dim_), trial_c(al_rows_);
    double prev_viol = std::numeric_limits<double>::infinity();
    double pg_norm = std::numeric_limits<double>::infinity();

    auto al_value = [&](double f, const Eigen::VectorXd& cc) {
      double val = f;
      for (int i = 0; i < al_rows_; ++i) {
        const double y = std::max(0.0, mu[i] + rho * cc[i]);
        val += (y * y - mu[i] * mu[i]) / (2.0 * rho);
      }
      return val;
    };

    evaluate(u, true, c);
    for (int outer = 0; outer < opts.max_outer; ++outer) {
      stats.outer_iterations = outer + 1;
      // Once feasible there is no reason to solve the subproblem loosely.
      const double viol_now = c.size() > 0 ? std::max(0.0, c.maxCoeff()) : 0.0;
      const double omega_use =
          viol_now <= opts.feasibility_tol ? opts.stationarity_tol : omega;

      for (int inner = 0; inner < opts.max_inner; ++inner) {
        // AL gradient at the current point (margins already evaluated).
        objective_gradient_u(grad);
        std::vector<int> active;
        for (int i = 0; i < al_rows_; ++i)
          if (mu[i] + rho * c[i] > 0.0) active.push_back(i);
        Eigen::MatrixXd jact(active.size(), u_dim_);
        for (size_t a = 0; a < active.size(); ++a) {
          row_buf_.setZero(u_dim_);
          constraint_gradient_row(active[a], row_buf_);
          jact.row(a) = row_buf_.transpose();
          grad += (mu[active[a]] + rho * c[active[a]]) * row_buf_;
        }
        pg_norm = ((u - grad).cwiseMax(u_lo_).cwiseMin(u_hi_) - u)
                      .lpNorm<Eigen::Infinity>();
        if (pg_norm <= omega_use) break;
        ++stats.inner_iterations;

        // Gauss-Newton model: exact quadratic objective Hessian plus
        // rho * J^T J over the active constraint rows.
        Eigen::MatrixXd h = h_quad_;
        if (active.size() > 0) {
          h.selfadjointView<Eigen::Lower>().rankUpdate(jact.transpose(), rho);
          h = h.selfadjointView<Eigen::Lower>();
        }
        const double reg = 1e-9 * std::max(1.0, h.diagonal().maxCoeff());
        h.diagonal().array() += reg;

        // Newton step on the free set, zero on the active box set.
        Eigen::VectorXd d = Eigen::VectorXd::Zero(u_dim_);
        std::vector<int> free_idx;
        free_idx.reserve(u_dim_);
        const double edge = 1e-10;
        for (int i = 0; i < u_dim_; ++i) {
          const bool at_lo = u[i] <= u_lo_[i] + edge && grad[i] > 0.0;
          const bool at_hi = u[i] >= u_hi_[i] - edge && grad[i] < 0.0;
          if (!at_lo && !at_hi) free_idx.push_back(i);
        }
        if (!free_idx.empty()) {
          Eigen::MatrixXd hff(free_idx.size(), free_idx.size());
          Eigen::VectorXd gf(free_idx.size());
          for (size_t r = 0; r < free_idx.size(); ++r) {
            gf[r] = grad[free_idx[r]];
            for (size_t cidx = 0; cidx < free_idx.size(); ++cidx)
              hff(r, cidx) = h(free_idx[r], free_idx[cidx]);
          }
          Eigen::LDLT<Eigen::MatrixXd> ldlt(hff);
          Eigen::VectorXd df = ldlt.solve(-gf);
          if (ldlt.info() == Eigen::Success && df.allFinite()) {
            for (size_t r = 0; r < free_idx.size(); ++r)
              d[free_idx[r]] = df[r];
          } else {
            for (size_t r = 0; r < free_idx.size(); ++r)
              d[free_idx[r]] = -gf[r];
          }
        }

        // Backtracking line search on the projected path.
        const double f0 = objective();
        const double l0 = al_value(f0, c);
        bool accepted = false;
        for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
          double t = 1.0;
          for (int ls = 0; ls < 30; ++ls, t *= 0.5) {
            Eigen::VectorXd u_try = clamp(u + t * d);
            const double step_dot = grad.dot(u_try - u);
            if (step_dot >= 0.0) continue;  // not a descent direction
            evaluate(u_try, false, trial_c);
            const double l_try = al_value(objective(), trial_c);
            if (l_try <= l0 + 1e-4 * step_dot) {
              u = u_try;
              c = trial_c;
              accepted = true;
              break;
            }
          }
          if (!accepted) d = -grad;  // steepest-descent fallback
        }
        if (!accepted) break;  // stalled; let the outer loop decide
        evaluate(u, true, c);   // refresh gradients at the accepted point
      }

      const double viol = c.size() > 0 ? std::max(0.0, c.maxCoeff()) : 0.0;
      stats.max_violation = viol;
      if (viol <= opts.feasibility_tol && pg_norm <= opts.stationarity_tol) {
        stats.converged = true;
        break;
      }
      for (int i = 0; i < al_rows_; ++i)
        mu[i] = std::max(0.0, mu[i] + rho * c[i]);
      if (viol > 0.25 * prev_viol) rho = std::min(rho * 10.0, 1e8);
      prev_viol = viol;
      omega = std::max(opts.stationarity_tol, omega * 0.2);
    }

    JointSolveResult result;
    rollout_states(u);
    result.objective = objective();
    stats.solve_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    result.stats = stats;
    for (int b = 0; b < p_.block_count(); ++b) {
      OcpSolution sol;
      sol.states = states_[b];
      sol.inputs = inputs_[b];
      sol.objective = block_objective(b);
      sol.stats = stats;
      result.robots.push_back(std::move(sol));
    }
    return result;
  }

 private:
  void evaluate(const Eigen::VectorXd& u, bool with_gradients,
                Eigen::VectorXd& c) {
    rollout_states(u);
    p_.evaluate_margins(states_, with_gradients, ws_);
    constraint_values(c);
  }

  void build_quadratic_hessian() {
    // The objective is an exact quadratic in the condensed inputs, so its
    // Hessian follows from probing the affine gradient map.
    Eigen::VectorXd g0(u_dim_), gi(u_dim_);
    rollout_states(Eigen::VectorXd::Zero(u_dim_));
    objective_gradient_u(g0);
    h_quad_.resize(u_dim_, u_dim_);
    Eigen::VectorXd probe = Eigen::VectorXd::Zero(u_dim_);
    for (int i = 0; i < u_dim_; ++i) {
      probe[i] = 1.0;
      rollout_states(probe);
      objective_gradient_u(gi);
      h_quad_.col(i) = gi - g0;
      probe[i] = 0.0;
    }
    h_quad_ = 0.5 * (h_quad_ + h_quad_.transpose()).eval();
  }

  double block_objective(int b) const {
    const auto& blk = p_.block(b);
    const auto& w = blk.config.weights;
    const double ts = blk.config.ts;
    double total = 0.0;
    for (int k = 0; k < np_; ++k) {
      const Eigen::VectorXd e = states_[b][k].stacked() - blk.x_goal.stacked();
      total += e.dot(w.qx.cwiseProduct(e)) +
               inputs_[b][k].dot(w.ru.cwiseProduct(inputs_[b][k]));
    }
    total += terminal_cost(states_[b][np_], blk.x_goal, w);
    for (int k = 0; k + 1 < np_; ++k) {
      const Eigen::VectorXd du = (inputs_[b][k + 1] - inputs_[b][k]) / ts;
      total += du.dot(w.rd.cwiseProduct(du));
    }
    const Eigen::VectorXd du0 = (inputs_[b][0] - blk.u_prev) / ts;
    total += du0.dot(w.rd.cwiseProduct(du0));
    return total;
  }

  const JointOcp& p_;
  int np_;
  int u_dim_ = 0;
  std::vector<int> n_;
  std::vector<int> u_offset_;
  Eigen::VectorXd u_lo_, u_hi_;
  int al_rows_ = 0;
  int state_box_offset_ = 0;
  JointOcp::Workspace ws_;
  std::vector<std::vector<JointState>> states_;
  std::vector<std::vector<ControlInput>> inputs_;
  Eigen::MatrixXd h_quad_;
  Eigen::VectorXd row_buf_;
};

}  // namespace

JointSolveResult solve_ocp(
    const JointOcp& problem,
    const std::vector<std::vector<ControlInput>>* warm_start) {
  CondensedSolver solver(problem);
  return solver.solve(warm_start);
}

}  // namespace mrmpc
