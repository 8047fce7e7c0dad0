#pragma once

// Independent reference implementations used as test oracles. Plain doubles,
// written from the model definition rather than from the library code.

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

namespace oracle {

struct Net {
  int V, W, H, Q;
  bool has_terminal;
  int terminal;
};

// Parameter blocks, in storage order:
//   E[(V+1) x H]  token embeddings, row V is padding
//   P[Q x H]      query embeddings
//   A[H x (W+1)H] hidden weights acting on [E(ctx_1) .. E(ctx_W), P(code)]
//   a[H]          hidden bias
//   U[V x H]      output weights
//   u[V]          output bias
inline std::vector<double> logits(const Net& n, const std::vector<double>& th, int code, const std::vector<int>& ctx) {
  const std::size_t H = n.H, V = n.V, W = n.W, Q = n.Q;
  const std::size_t E = 0, P = E + (V + 1) * H, A = P + Q * H, a = A + H * (W + 1) * H, U = a + H, u = U + V * H;
  std::vector<double> in;
  for (int tok : ctx) {
    for (std::size_t j = 0; j < H; ++j) in.push_back(th[E + static_cast<std::size_t>(tok) * H + j]);
  }
  for (std::size_t j = 0; j < H; ++j) in.push_back(th[P + static_cast<std::size_t>(code) * H + j]);
  std::vector<double> h(H);
  for (std::size_t r = 0; r < H; ++r) {
    double s = th[a + r];
    for (std::size_t c = 0; c < in.size(); ++c) s += th[A + r * in.size() + c] * in[c];
    h[r] = std::tanh(s);
  }
  std::vector<double> z(V);
  for (std::size_t k = 0; k < V; ++k) {
    double s = th[u + k];
    for (std::size_t j = 0; j < H; ++j) s += th[U + k * H + j] * h[j];
    z[k] = s;
  }
  return z;
}

inline std::vector<int> window(const Net& n, const std::vector<int>& prefix, const std::vector<int>& hist) {
  std::vector<int> all = prefix;
  all.insert(all.end(), hist.begin(), hist.end());
  std::vector<int> w(static_cast<std::size_t>(n.W), n.V);
  for (int k = 0; k < n.W && k < static_cast<int>(all.size()); ++k) {
    w[static_cast<std::size_t>(n.W - 1 - k)] = all[all.size() - 1 - static_cast<std::size_t>(k)];
  }
  return w;
}

inline double log_softmax(const std::vector<double>& z, int k) {
  double m = z[0];
  for (double x : z) m = std::max(m, x);
  double s = 0.0;
  for (double x : z) s += std::exp(x - m);
  return z[static_cast<std::size_t>(k)] - m - std::log(s);
}

inline double seq_logprob(const Net& n, const std::vector<double>& th, int code, const std::vector<int>& prefix,
                          const std::vector<int>& o) {
  double total = 0.0;
  std::vector<int> hist;
  for (int tok : o) {
    total += log_softmax(logits(n, th, code, window(n, prefix, hist)), tok);
    hist.push_back(tok);
  }
  return total;
}

inline double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline std::vector<double> rloo(const std::vector<double>& r) {
  std::vector<double> psi;
  for (std::size_t i = 0; i < r.size(); ++i) {
    double others = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (j != i) others += r[j];
    }
    psi.push_back(r[i] - others / static_cast<double>(r.size() - 1));
  }
  return psi;
}

// -(1/G) sum w_i [R_i log sig(psi_i) + (1 - R_i) log(1 - sig(psi_i))], group-scope weights.
inline double pacs_group_loss(const std::vector<double>& psi, const std::vector<int>& R, bool weighted) {
  const double G = static_cast<double>(R.size());
  double pos = 0.0;
  for (int r : R) pos += r;
  const double neg = G - pos;
  double total = 0.0;
  for (std::size_t i = 0; i < R.size(); ++i) {
    double w = 1.0;
    if (weighted && pos > 0 && neg > 0) w = R[i] ? G / (2 * pos) : G / (2 * neg);
    total += w * (R[i] ? log_sigmoid(psi[i]) : log_sigmoid(-psi[i]));
  }
  return -total / G;
}

// 1 - (#k-subsets of n items with no correct one) / (#k-subsets), by bitmask enumeration.
inline double pass_at_k_subsets(int n, int c, int k) {
  std::uint64_t total = 0, hit = 0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (std::popcount(mask) != k) continue;
    ++total;
    if ((mask & ((1u << c) - 1u)) != 0) ++hit;  // items 0..c-1 are the correct ones
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

inline double k3(double logp_cur, double logp_ref) {
  const double r = std::exp(logp_ref - logp_cur);
  return r - std::log(r) - 1.0;
}

inline std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                              std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

}  // namespace oracle
