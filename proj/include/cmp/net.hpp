#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmp/mat.hpp"
#include "cmp/rng.hpp"

namespace cmp {

enum class Act { kElu, kIdentity, kLogistic };

inline std::string act_name(Act a) {
  switch (a) {
    case Act::kElu: return "elu";
    case Act::kIdentity: return "identity";
    case Act::kLogistic: return "logistic";
  }
  return "?";
}

inline Act act_from_name(const std::string& s) {
  if (s == "elu") return Act::kElu;
  if (s == "identity") return Act::kIdentity;
  if (s == "logistic") return Act::kLogistic;
  throw std::invalid_argument("unknown activation: " + s);
}

inline double apply_act(Act a, double x) {
  switch (a) {
    case Act::kElu: return x > 0.0 ? x : std::expm1(x);
    case Act::kIdentity: return x;
    case Act::kLogistic: {
      double s;
      if (x >= 0.0) {
        s = 1.0 / (1.0 + std::exp(-x));
      } else {
        const double e = std::exp(x);
        s = e / (1.0 + e);
      }
      // keep strictly inside (0,1) even for saturating inputs
      if (s < 1e-12) s = 1e-12;
      if (s > 1.0 - 1e-12) s = 1.0 - 1e-12;
      return s;
    }
  }
  return x;
}

// derivative from pre-activation x and the stored activation value h
inline double act_deriv(Act a, double x, double h) {
  switch (a) {
    case Act::kElu: return x > 0.0 ? 1.0 : h + 1.0;
    case Act::kIdentity: return 1.0;
    case Act::kLogistic: return h * (1.0 - h);
  }
  return 1.0;
}

// fully connected net; float64 end to end
struct DenseNet {
  std::vector<int> widths;  // [in, hidden..., out]
  Act hidden_act = Act::kElu;
  Act output_act = Act::kIdentity;
  std::vector<Mat> w;  // w[l] is widths[l] x widths[l+1]
  std::vector<std::vector<double>> b;

  int layers() const { return static_cast<int>(w.size()); }
  int in_dim() const { return widths.front(); }
  int out_dim() const { return widths.back(); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (int l = 0; l < layers(); ++l) n += w[l].a.size() + b[l].size();
    return n;
  }

  Act act_at(int layer) const { return layer + 1 == layers() ? output_act : hidden_act; }
};

// weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero
inline DenseNet make_dense(const std::vector<int>& widths, Act hidden, Act output, Rng& rng) {
  if (widths.size() < 2) throw std::invalid_argument("make_dense: need at least in/out widths");
  DenseNet net;
  net.widths = widths;
  net.hidden_act = hidden;
  net.output_act = output;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Mat wl(widths[l], widths[l + 1]);
    const double lim = 1.0 / std::sqrt(static_cast<double>(widths[l]));
    for (double& v : wl.a) v = rng.uniform(-lim, lim);
    net.w.push_back(std::move(wl));
    net.b.emplace_back(widths[l + 1], 0.0);
  }
  return net;
}

struct FwdCache {
  Mat x;               // input batch
  std::vector<Mat> z;  // pre-activations
  std::vector<Mat> h;  // activations; h.back() is the output
};

struct NetGrads {
  std::vector<Mat> dw;
  std::vector<std::vector<double>> db;
  Mat dx;
};

inline const Mat& forward_batch(const DenseNet& net, const Mat& x, FwdCache& cache) {
  if (x.cols != net.in_dim())
    throw std::invalid_argument("forward: input dim " + std::to_string(x.cols) + " != " +
                                std::to_string(net.in_dim()));
  const int nl = net.layers();
  cache.x = x;
  cache.z.resize(nl);
  cache.h.resize(nl);
  const Mat* prev = &cache.x;
  for (int l = 0; l < nl; ++l) {
    matmul(*prev, net.w[l], cache.z[l]);
    Mat& zl = cache.z[l];
    for (int i = 0; i < zl.rows; ++i) {
      double* zr = zl.row(i);
      const double* bl = net.b[l].data();
      for (int j = 0; j < zl.cols; ++j) zr[j] += bl[j];
    }
    const Act a = net.act_at(l);
    Mat& hl = cache.h[l];
    if (hl.rows != zl.rows || hl.cols != zl.cols) hl = Mat(zl.rows, zl.cols);
    for (std::size_t i = 0; i < zl.a.size(); ++i) hl.a[i] = apply_act(a, zl.a[i]);
    prev = &cache.h[l];
  }
  return cache.h.back();
}

inline std::vector<double> forward(const DenseNet& net, const std::vector<double>& x) {
  Mat xm(1, static_cast<int>(x.size()));
  xm.a = x;
  FwdCache cache;
  const Mat& y = forward_batch(net, xm, cache);
  return y.a;
}

// dy is dLoss/d(output); gradients are summed over the batch rows
inline void backward_batch(const DenseNet& net, const FwdCache& cache, const Mat& dy,
                           NetGrads& g) {
  const int nl = net.layers();
  if (dy.rows != cache.h.back().rows || dy.cols != cache.h.back().cols)
    throw std::invalid_argument("backward: upstream gradient shape mismatch");
  g.dw.resize(nl);
  g.db.resize(nl);
  Mat delta = dy;  // becomes dLoss/dz layer by layer
  for (int l = nl - 1; l >= 0; --l) {
    const Act a = net.act_at(l);
    const Mat& zl = cache.z[l];
    const Mat& hl = cache.h[l];
    for (std::size_t i = 0; i < delta.a.size(); ++i)
      delta.a[i] *= act_deriv(a, zl.a[i], hl.a[i]);
    const Mat& input = l == 0 ? cache.x : cache.h[l - 1];
    matmul_tn(input, delta, g.dw[l]);
    g.db[l].assign(net.b[l].size(), 0.0);
    for (int i = 0; i < delta.rows; ++i) {
      const double* dr = delta.row(i);
      for (int j = 0; j < delta.cols; ++j) g.db[l][j] += dr[j];
    }
    if (l > 0) {
      Mat next;
      matmul_nt(delta, net.w[l], next);
      delta = std::move(next);
    } else {
      matmul_nt(delta, net.w[0], g.dx);
    }
  }
}

// flat parameter order: per layer, row-major weights then biases
inline void flatten_params(const DenseNet& net, std::vector<double>& out) {
  out.clear();
  out.reserve(net.param_count());
  for (int l = 0; l < net.layers(); ++l) {
    out.insert(out.end(), net.w[l].a.begin(), net.w[l].a.end());
    out.insert(out.end(), net.b[l].begin(), net.b[l].end());
  }
}

inline void assign_params(DenseNet& net, const std::vector<double>& flat) {
  if (flat.size() != net.param_count())
    throw std::invalid_argument("assign_params: size mismatch");
  std::size_t k = 0;
  for (int l = 0; l < net.layers(); ++l) {
    for (double& v : net.w[l].a) v = flat[k++];
    for (double& v : net.b[l]) v = flat[k++];
  }
}

inline void flatten_grads(const NetGrads& g, std::vector<double>& out) {
  out.clear();
  for (std::size_t l = 0; l < g.dw.size(); ++l) {
    out.insert(out.end(), g.dw[l].a.begin(), g.dw[l].a.end());
    out.insert(out.end(), g.db[l].begin(), g.db[l].end());
  }
}

inline void accumulate_grads(NetGrads& acc, const NetGrads& g) {
  if (acc.dw.empty()) {
    acc = g;
    return;
  }
  for (std::size_t l = 0; l < g.dw.size(); ++l) {
    for (std::size_t i = 0; i < g.dw[l].a.size(); ++i) acc.dw[l].a[i] += g.dw[l].a[i];
    for (std::size_t i = 0; i < g.db[l].size(); ++i) acc.db[l][i] += g.db[l][i];
  }
}

inline void scale_grads(NetGrads& g, double s) {
  for (auto& m : g.dw)
    for (double& v : m.a) v *= s;
  for (auto& bv : g.db)
    for (double& v : bv) v *= s;
}

}  // namespace cmp
