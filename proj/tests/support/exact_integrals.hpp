// Test oracle: the expectations that compute_data_integrals estimates,
// obtained from the model's first and second moment ODEs. This reads A, B
// and D and is therefore NOT model-free; it exists only to check the learner
// against model-based Kleinman iterates.
#pragma once

#include <cmath>
#include <map>

#include "mfg_irl/irl.hpp"

namespace mfg_irl::oracle {

/// With F = A - B L0 and alpha = -L0 x + l(t):
///   m' = F m + B l,  S' = F S + S F^T + B l m^T + m l^T B^T + D D^T,
///   E[alpha x^T] = -L0 S + l m^T.
/// Integrated with RK4 on the grid of step h starting from x(0) = x0.
inline DataMatrices exact_data_integrals(const PopulationModel& pop,
                                         const ExplorationPolicy& policy, const Vector& x0,
                                         const WindowSet& windows, double h) {
  const Index N = pop.N(), M = pop.M();
  const Matrix& L0 = policy.initial_gain();
  const Matrix F = pop.A - pop.B * L0;
  const Matrix DDt = pop.D * pop.D.transpose();
  const double rho = pop.rho;

  struct State {
    Vector m;
    Matrix S, Ixx, Iax;
  };
  auto deriv = [&](double t, const State& s) {
    const Vector l = policy.sample(t);
    const Vector Bl = pop.B * l;
    const double e = std::exp(-rho * t);
    State d;
    d.m = F * s.m + Bl;
    d.S = F * s.S + s.S * F.transpose() + Bl * s.m.transpose() + s.m * Bl.transpose() + DDt;
    d.Ixx = e * s.S;
    d.Iax = e * (-L0 * s.S + l * s.m.transpose());
    return d;
  };
  auto axpy = [](const State& s, double a, const State& d) {
    return State{s.m + a * d.m, s.S + a * d.S, s.Ixx + a * d.Ixx, s.Iax + a * d.Iax};
  };

  std::map<Index, State> snapshots;
  for (double t : windows.starts) {
    snapshots[detail::aligned_index(t, h, "start")] = {};
    snapshots[detail::aligned_index(t + windows.length, h, "end")] = {};
  }
  const Index last = snapshots.rbegin()->first;

  State s{x0, x0 * x0.transpose(), Matrix::Zero(N, N), Matrix::Zero(M, N)};
  for (Index j = 0;; ++j) {
    if (auto it = snapshots.find(j); it != snapshots.end()) it->second = s;
    if (j == last) break;
    const double t = static_cast<double>(j) * h;
    const State k1 = deriv(t, s);
    const State k2 = deriv(t + 0.5 * h, axpy(s, 0.5 * h, k1));
    const State k3 = deriv(t + 0.5 * h, axpy(s, 0.5 * h, k2));
    const State k4 = deriv(t + h, axpy(s, h, k3));
    s.m += (h / 6.0) * (k1.m + 2.0 * k2.m + 2.0 * k3.m + k4.m);
    s.S += (h / 6.0) * (k1.S + 2.0 * k2.S + 2.0 * k3.S + k4.S);
    s.Ixx += (h / 6.0) * (k1.Ixx + 2.0 * k2.Ixx + 2.0 * k3.Ixx + k4.Ixx);
    s.Iax += (h / 6.0) * (k1.Iax + 2.0 * k2.Iax + 2.0 * k3.Iax + k4.Iax);
  }

  std::vector<detail::WindowMoments> mom;
  for (double t : windows.starts) {
    const double te = t + windows.length;
    const State& a = snapshots.at(detail::aligned_index(t, h, "start"));
    const State& b = snapshots.at(detail::aligned_index(te, h, "end"));
    mom.push_back({b.Ixx - a.Ixx, b.Iax - a.Iax,
                   std::exp(-rho * te) * b.S - std::exp(-rho * t) * a.S});
  }
  return detail::to_data_matrices(mom, rho, pop.state_dims(), pop.input_dims(), windows, 1);
}

}  // namespace mfg_irl::oracle
