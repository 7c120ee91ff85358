#include "latentcodec/nn.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "latentcodec/histogram.hpp"
#include "latentcodec/rng.hpp"

namespace lc::nn {

namespace {

constexpr double kLn2 = 0.6931471805599453;

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.ch != b.ch || a.len != b.len) {
    throw BadShapeError(std::string(what) + ": tensor shapes differ");
  }
}

NodePtr make_node(Tensor value, std::vector<NodePtr> parents) {
  auto n = std::make_shared<Node>();
  n->grad = Tensor::zeros(value.ch, value.len);
  n->value = std::move(value);
  n->parents = std::move(parents);
  return n;
}

void add_into(Tensor& dst, const Tensor& src) {
  for (size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

struct ConvDims {
  uint32_t c_in, c_out, cig, cog, k;
  int pad;
};

// Validated dimensions for the direct convolution (weights [C_out][C_in/G][K]).
ConvDims conv_dims(const Tensor& x, const Tensor& w, const Tensor& b,
                   uint32_t stride, uint32_t groups) {
  if (groups == 0 || stride == 0) throw BadShapeError("conv: zero stride or groups");
  uint32_t c_in = x.ch, c_out = w.ch;
  if (c_in == 0 || c_in % groups != 0 || c_out == 0 || c_out % groups != 0) {
    throw BadShapeError("conv: channel counts not divisible by groups");
  }
  uint32_t cig = c_in / groups;
  if (w.len % cig != 0) throw BadShapeError("conv: weight length mismatch");
  uint32_t k = w.len / cig;
  if (k % 2 == 0) throw BadShapeError("conv: kernel size must be odd");
  if (b.ch != c_out || b.len != 1) throw BadShapeError("conv: bias shape mismatch");
  if (x.len == 0 || x.len % stride != 0) {
    throw BadShapeError("conv: length not divisible by stride");
  }
  return {c_in, c_out, cig, c_out / groups, k, int(k - 1) / 2};
}

// Validated dimensions for the transposed convolution (weights [C_in][C_out/G][K]).
ConvDims tconv_dims(const Tensor& x, const Tensor& w, const Tensor& b,
                    uint32_t stride, uint32_t groups) {
  if (groups == 0 || stride == 0) throw BadShapeError("tconv: zero stride or groups");
  uint32_t c_in = x.ch;
  if (w.ch != c_in) throw BadShapeError("tconv: weight rows must match input channels");
  uint32_t c_out = b.ch;
  if (c_in == 0 || c_in % groups != 0 || c_out == 0 || c_out % groups != 0) {
    throw BadShapeError("tconv: channel counts not divisible by groups");
  }
  uint32_t cog = c_out / groups;
  if (w.len % cog != 0) throw BadShapeError("tconv: weight length mismatch");
  uint32_t k = w.len / cog;
  if (k % 2 == 0) throw BadShapeError("tconv: kernel size must be odd");
  if (b.len != 1) throw BadShapeError("tconv: bias shape mismatch");
  if (x.len == 0) throw BadShapeError("tconv: empty input");
  return {c_in, c_out, c_in / groups, cog, k, int(k - 1) / 2};
}

}  // namespace

NodePtr leaf(Tensor value, bool requires_grad) {
  NodePtr n = make_node(std::move(value), {});
  n->requires_grad = requires_grad;
  return n;
}

void backward(const NodePtr& root) {
  if (root->value.ch != 1 || root->value.len != 1) {
    throw BadShapeError("backward root must be a 1x1 scalar");
  }
  // Iterative post-order DFS: the list ends up parents-before-children, so
  // walking it backwards hands every node its full grad before use.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root->grad.v[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn();
  }
}

// --- raw forward kernels ----------------------------------------------------

Tensor conv1d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      uint32_t stride, uint32_t groups) {
  ConvDims d = conv_dims(x, w, b, stride, groups);
  const uint32_t l_out = x.len / stride;
  Tensor y = Tensor::zeros(d.c_out, l_out);
  for (uint32_t co = 0; co < d.c_out; ++co) {
    const uint32_t g = co / d.cog;
    for (uint32_t t = 0; t < l_out; ++t) {
      double acc = b.at(co, 0);
      for (uint32_t cl = 0; cl < d.cig; ++cl) {
        const uint32_t ci = g * d.cig + cl;
        for (uint32_t k = 0; k < d.k; ++k) {
          const int pos = int(t * stride) + int(k) - d.pad;
          if (pos < 0 || pos >= int(x.len)) continue;
          acc += w.at(co, cl * d.k + k) * x.at(ci, uint32_t(pos));
        }
      }
      y.at(co, t) = acc;
    }
  }
  return y;
}

Tensor conv1d_transposed_forward(const Tensor& x, const Tensor& w,
                                 const Tensor& b, uint32_t stride,
                                 uint32_t groups) {
  ConvDims d = tconv_dims(x, w, b, stride, groups);
  const uint32_t l_out = x.len * stride;
  Tensor y = Tensor::zeros(d.c_out, l_out);
  for (uint32_t co = 0; co < d.c_out; ++co) {
    const uint32_t g = co / d.cog;
    const uint32_t col = co - g * d.cog;  // co local to its group
    for (uint32_t p = 0; p < l_out; ++p) {
      double acc = b.at(co, 0);
      for (uint32_t cl = 0; cl < d.cig; ++cl) {
        const uint32_t ci = g * d.cig + cl;
        for (uint32_t k = 0; k < d.k; ++k) {
          const int num = int(p) + d.pad - int(k);
          if (num < 0 || num % int(stride) != 0) continue;
          const int t = num / int(stride);
          if (t >= int(x.len)) continue;
          acc += w.at(ci, col * d.k + k) * x.at(ci, uint32_t(t));
        }
      }
      y.at(co, p) = acc;
    }
  }
  return y;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.v) v = std::max(0.0, v);
  return y;
}

Tensor channel_shuffle_forward(const Tensor& x, uint32_t groups) {
  if (groups == 0 || x.ch % groups != 0) {
    throw BadShapeError("shuffle: channels not divisible by groups");
  }
  const uint32_t per = x.ch / groups;
  Tensor y = Tensor::zeros(x.ch, x.len);
  for (uint32_t c = 0; c < x.ch; ++c) {
    const uint32_t dst = (c % groups) * per + c / groups;
    for (uint32_t i = 0; i < x.len; ++i) y.at(dst, i) = x.at(c, i);
  }
  return y;
}

Tensor softmax_bins_forward(const Tensor& x) {
  Tensor y = Tensor::zeros(x.ch, x.len);
  for (uint32_t c = 0; c < x.ch; ++c) {
    double m = x.at(c, 0);
    for (uint32_t i = 1; i < x.len; ++i) m = std::max(m, x.at(c, i));
    double sum = 0;
    for (uint32_t i = 0; i < x.len; ++i) {
      const double e = std::exp(x.at(c, i) - m);
      y.at(c, i) = e;
      sum += e;
    }
    for (uint32_t i = 0; i < x.len; ++i) y.at(c, i) /= sum;
  }
  return y;
}

// --- graph ops ----------------------------------------------------------------

NodePtr conv1d(const NodePtr& x, const NodePtr& w, const NodePtr& b,
               uint32_t stride, uint32_t groups) {
  NodePtr n = make_node(conv1d_forward(x->value, w->value, b->value, stride, groups),
                        {x, w, b});
  n->backward_fn = [self = n.get(), xp = x.get(), wp = w.get(), bp = b.get(),
                    stride, groups]() {
    ConvDims d = conv_dims(xp->value, wp->value, bp->value, stride, groups);
    const Tensor& g = self->grad;
    // dL/dx is exactly the transposed convolution of the upstream grad.
    Tensor zero_bias = Tensor::zeros(d.c_in, 1);
    add_into(xp->grad,
             conv1d_transposed_forward(g, wp->value, zero_bias, stride, groups));
    for (uint32_t co = 0; co < d.c_out; ++co) {
      const uint32_t grp = co / d.cog;
      for (uint32_t t = 0; t < g.len; ++t) {
        const double gv = g.at(co, t);
        bp->grad.at(co, 0) += gv;
        for (uint32_t cl = 0; cl < d.cig; ++cl) {
          const uint32_t ci = grp * d.cig + cl;
          for (uint32_t k = 0; k < d.k; ++k) {
            const int pos = int(t * stride) + int(k) - d.pad;
            if (pos < 0 || pos >= int(xp->value.len)) continue;
            wp->grad.at(co, cl * d.k + k) += gv * xp->value.at(ci, uint32_t(pos));
          }
        }
      }
    }
  };
  return n;
}

NodePtr conv1d_transposed(const NodePtr& x, const NodePtr& w, const NodePtr& b,
                          uint32_t stride, uint32_t groups) {
  NodePtr n = make_node(
      conv1d_transposed_forward(x->value, w->value, b->value, stride, groups),
      {x, w, b});
  n->backward_fn = [self = n.get(), xp = x.get(), wp = w.get(), bp = b.get(),
                    stride, groups]() {
    ConvDims d = tconv_dims(xp->value, wp->value, bp->value, stride, groups);
    const Tensor& g = self->grad;
    // The adjoint of the adjoint: dL/dx is the direct convolution of the
    // upstream grad with the same weights.
    Tensor zero_bias = Tensor::zeros(d.c_in, 1);
    add_into(xp->grad, conv1d_forward(g, wp->value, zero_bias, stride, groups));
    for (uint32_t co = 0; co < d.c_out; ++co) {
      const uint32_t grp = co / d.cog;
      const uint32_t col = co - grp * d.cog;
      for (uint32_t p = 0; p < g.len; ++p) {
        const double gv = g.at(co, p);
        bp->grad.at(co, 0) += gv;
        for (uint32_t cl = 0; cl < d.cig; ++cl) {
          const uint32_t ci = grp * d.cig + cl;
          for (uint32_t k = 0; k < d.k; ++k) {
            const int num = int(p) + d.pad - int(k);
            if (num < 0 || num % int(stride) != 0) continue;
            const int t = num / int(stride);
            if (t >= int(xp->value.len)) continue;
            wp->grad.at(ci, col * d.k + k) += gv * xp->value.at(ci, uint32_t(t));
          }
        }
      }
    }
  };
  return n;
}

NodePtr relu(const NodePtr& x) {
  NodePtr n = make_node(relu_forward(x->value), {x});
  n->backward_fn = [self = n.get(), xp = x.get()]() {
    for (size_t i = 0; i < self->grad.v.size(); ++i) {
      if (xp->value.v[i] > 0) xp->grad.v[i] += self->grad.v[i];
    }
  };
  return n;
}

NodePtr clamp_support(const NodePtr& x) {
  constexpr double lo = double(kQSupportMin);
  constexpr double hi = double(kQSupportMax);
  Tensor out = x->value;
  for (double& v : out.v) v = std::clamp(v, lo, hi);
  NodePtr n = make_node(std::move(out), {x});
  n->backward_fn = [self = n.get(), xp = x.get()]() {
    for (size_t i = 0; i < self->grad.v.size(); ++i) {
      const double v = xp->value.v[i];
      if (v > lo && v < hi) xp->grad.v[i] += self->grad.v[i];
    }
  };
  return n;
}

NodePtr channel_shuffle(const NodePtr& x, uint32_t groups) {
  NodePtr n = make_node(channel_shuffle_forward(x->value, groups), {x});
  n->backward_fn = [self = n.get(), xp = x.get(), groups]() {
    const uint32_t per = xp->value.ch / groups;
    for (uint32_t c = 0; c < xp->value.ch; ++c) {
      const uint32_t dst = (c % groups) * per + c / groups;
      for (uint32_t i = 0; i < xp->value.len; ++i) {
        xp->grad.at(c, i) += self->grad.at(dst, i);
      }
    }
  };
  return n;
}

NodePtr softmax_bins(const NodePtr& x) {
  NodePtr n = make_node(softmax_bins_forward(x->value), {x});
  n->backward_fn = [self = n.get(), xp = x.get()]() {
    const Tensor& y = self->value;
    for (uint32_t c = 0; c < y.ch; ++c) {
      double dot = 0;
      for (uint32_t i = 0; i < y.len; ++i) dot += self->grad.at(c, i) * y.at(c, i);
      for (uint32_t i = 0; i < y.len; ++i) {
        xp->grad.at(c, i) += y.at(c, i) * (self->grad.at(c, i) - dot);
      }
    }
  };
  return n;
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
  check_same_shape(a->value, b->value, "add");
  Tensor out = a->value;
  add_into(out, b->value);
  NodePtr n = make_node(std::move(out), {a, b});
  n->backward_fn = [self = n.get(), ap = a.get(), bp = b.get()]() {
    add_into(ap->grad, self->grad);
    add_into(bp->grad, self->grad);
  };
  return n;
}

NodePtr scale(const NodePtr& a, double k) {
  Tensor out = a->value;
  for (double& v : out.v) v *= k;
  NodePtr n = make_node(std::move(out), {a});
  n->backward_fn = [self = n.get(), ap = a.get(), k]() {
    for (size_t i = 0; i < self->grad.v.size(); ++i) {
      ap->grad.v[i] += k * self->grad.v[i];
    }
  };
  return n;
}

NodePtr add_uniform_noise(const NodePtr& x, std::mt19937_64& rng) {
  Tensor out = x->value;
  for (double& v : out.v) v += rng::uniform01(rng) - 0.5;
  NodePtr n = make_node(std::move(out), {x});
  n->backward_fn = [self = n.get(), xp = x.get()]() {
    add_into(xp->grad, self->grad);
  };
  return n;
}

NodePtr ste_histogram(const NodePtr& y, const HistogramSpec& spec) {
  spec.validate();
  const Tensor& yin = y->value;
  const uint32_t b = uint32_t(spec.num_bins());
  Tensor out = Tensor::zeros(yin.ch, b);
  for (uint32_t c = 0; c < yin.ch; ++c) {
    std::span<const double> row(yin.v.data() + size_t(c) * yin.len, yin.len);
    Pmf p = hist::hard_histogram(row, spec);
    for (uint32_t i = 0; i < b; ++i) out.at(c, i) = p.mass[i];
  }
  NodePtr n = make_node(std::move(out), {y});
  n->backward_fn = [self = n.get(), yp = y.get(), spec]() {
    const Tensor& yin2 = yp->value;
    for (uint32_t c = 0; c < yin2.ch; ++c) {
      std::span<const double> row(yin2.v.data() + size_t(c) * yin2.len, yin2.len);
      std::span<const double> up(self->grad.v.data() + size_t(c) * self->grad.len,
                                 self->grad.len);
      std::vector<double> g = hist::soft_histogram_grad(row, spec, up);
      for (uint32_t i = 0; i < yin2.len; ++i) yp->grad.at(c, i) += g[i];
    }
  };
  return n;
}

NodePtr rate_loss_bits(const NodePtr& p, const NodePtr& p_hat, double scale_n) {
  if (p->value.ch != p_hat->value.ch || p->value.len != p_hat->value.len) {
    throw SpecMismatchError("rate loss: distribution shapes differ");
  }
  double bits = 0;
  for (size_t i = 0; i < p->value.v.size(); ++i) {
    const double pv = p->value.v[i];
    if (pv != 0.0) bits -= pv * std::log2(p_hat->value.v[i]);
  }
  NodePtr n = make_node(Tensor{1, 1, {scale_n * bits}}, {p, p_hat});
  n->backward_fn = [self = n.get(), pp = p.get(), qp = p_hat.get(), scale_n]() {
    const double g = self->grad.v[0] * scale_n;
    for (size_t i = 0; i < pp->value.v.size(); ++i) {
      const double pv = pp->value.v[i];
      const double qv = qp->value.v[i];
      pp->grad.v[i] += g * (-std::log2(qv));
      if (pv != 0.0) qp->grad.v[i] += g * (-pv / (qv * kLn2));
    }
  };
  return n;
}

NodePtr q_rate_loss_bits(const NodePtr& q_tilde, const NodePtr& logits) {
  if (logits->value.ch != q_tilde->value.ch ||
      logits->value.len != kQSupportSize) {
    throw SpecMismatchError("q rate loss: logits shape mismatch");
  }
  const Tensor pmf = softmax_bins_forward(logits->value);
  const Tensor& qt = q_tilde->value;

  auto interp = [](const Tensor& pf, uint32_t c, double q, uint32_t& ia,
                   uint32_t& ib, double& alpha) {
    double t = std::clamp(q, double(kQSupportMin), double(kQSupportMax));
    double fl = std::floor(t);
    alpha = t - fl;
    ia = uint32_t(int(fl) - kQSupportMin);
    ib = std::min(ia + 1, kQSupportSize - 1);
    return (1.0 - alpha) * pf.at(c, ia) + alpha * pf.at(c, ib);
  };

  double bits = 0;
  for (uint32_t c = 0; c < qt.ch; ++c) {
    for (uint32_t i = 0; i < qt.len; ++i) {
      uint32_t ia, ib;
      double alpha;
      const double q = qt.at(c, i);
      bits -= std::log2(interp(pmf, c, q, ia, ib, alpha));
      if (q < double(kQSupportMin)) {
        bits += kQOutOfSupportSlope * (double(kQSupportMin) - q);
      } else if (q > double(kQSupportMax)) {
        bits += kQOutOfSupportSlope * (q - double(kQSupportMax));
      }
    }
  }

  NodePtr n = make_node(Tensor{1, 1, {bits}}, {q_tilde, logits});
  n->backward_fn = [self = n.get(), qtp = q_tilde.get(), lp = logits.get(), pmf,
                    interp]() {
    const double g = self->grad.v[0];
    const Tensor& qt2 = qtp->value;
    for (uint32_t c = 0; c < qt2.ch; ++c) {
      std::vector<double> gp(kQSupportSize, 0.0);  // dL/dpmf for this channel
      for (uint32_t i = 0; i < qt2.len; ++i) {
        const double q = qt2.at(c, i);
        uint32_t ia, ib;
        double alpha;
        const double pe = interp(pmf, c, q, ia, ib, alpha);
        const double common = -g / (pe * kLn2);
        gp[ia] += common * (1.0 - alpha);
        gp[ib] += common * alpha;
        // q̃ gradient: the overshoot slope outside the support, the pmf
        // interpolation slope inside, zero at the integer kinks (the
        // subgradient convention used throughout).
        if (q < double(kQSupportMin)) {
          qtp->grad.at(c, i) -= g * kQOutOfSupportSlope;
        } else if (q > double(kQSupportMax)) {
          qtp->grad.at(c, i) += g * kQOutOfSupportSlope;
        } else if (alpha != 0.0) {
          qtp->grad.at(c, i) += common * (pmf.at(c, ib) - pmf.at(c, ia));
        }
      }
      double dot = 0;
      for (uint32_t j = 0; j < kQSupportSize; ++j) dot += gp[j] * pmf.at(c, j);
      for (uint32_t j = 0; j < kQSupportSize; ++j) {
        lp->grad.at(c, j) += pmf.at(c, j) * (gp[j] - dot);
      }
    }
  };
  return n;
}

double bottleneck_rate_grad(double y, const std::function<double(double)>& cdf,
                            const std::function<double(double)>& pdf) {
  const double p = cdf(y + 0.5) - cdf(y - 0.5);
  return -(pdf(y + 0.5) - pdf(y - 0.5)) / p;
}

// --- transform configuration ---------------------------------------------------

void TransformConfig::validate() const {
  if (channels == 0 || n_q == 0 || m_q == 0 || bins == 0) {
    throw BadShapeError("transform config has a zero dimension");
  }
  if (groups == 0 || channels % groups != 0 || n_q % groups != 0 ||
      m_q % groups != 0) {
    throw BadShapeError("transform config: channel counts not divisible by groups");
  }
  if (kernel % 2 == 0) throw BadShapeError("transform config: kernel must be odd");
  if (bins % kQDownscale != 0) {
    throw BadShapeError("transform config: bins must be divisible by the downscale");
  }
}

std::array<ConvSpec, 5> analysis_layers(const TransformConfig& cfg) {
  return {{{cfg.channels, cfg.n_q, 1, false},
           {cfg.n_q, cfg.n_q, 2, false},
           {cfg.n_q, cfg.n_q, 1, false},
           {cfg.n_q, cfg.n_q, 2, false},
           {cfg.n_q, cfg.m_q, 1, false}}};
}

std::array<ConvSpec, 5> synthesis_layers(const TransformConfig& cfg) {
  return {{{cfg.m_q, cfg.n_q, 1, false},
           {cfg.n_q, cfg.n_q, 2, true},
           {cfg.n_q, cfg.n_q, 1, false},
           {cfg.n_q, cfg.n_q, 2, true},
           {cfg.n_q, cfg.channels, 1, false}}};
}

uint64_t conv_param_count(uint32_t c_in, uint32_t c_out, uint32_t kernel,
                          uint32_t groups) {
  return uint64_t(c_out) * (c_in / groups) * kernel + c_out;
}

namespace {
uint64_t plan_params(const std::array<ConvSpec, 5>& plan, uint32_t kernel,
                     uint32_t groups) {
  uint64_t total = 0;
  for (const ConvSpec& l : plan) {
    total += conv_param_count(l.c_in, l.c_out, kernel, groups);
  }
  return total;
}
}  // namespace

uint64_t count_params_analysis(const TransformConfig& cfg) {
  cfg.validate();
  return plan_params(analysis_layers(cfg), cfg.kernel, cfg.groups);
}

uint64_t count_params_synthesis(const TransformConfig& cfg) {
  cfg.validate();
  return plan_params(synthesis_layers(cfg), cfg.kernel, cfg.groups);
}

uint64_t count_params(const TransformConfig& cfg) {
  return count_params_analysis(cfg) + count_params_synthesis(cfg);
}

// --- DistNet -------------------------------------------------------------------

DistNet DistNet::init(const TransformConfig& cfg, uint64_t seed) {
  cfg.validate();
  DistNet net;
  net.cfg = cfg;
  std::mt19937_64 rng(seed);

  auto init_stack = [&](const std::array<ConvSpec, 5>& plan,
                        std::vector<NodePtr>& ws, std::vector<NodePtr>& bs) {
    for (const ConvSpec& l : plan) {
      // Fan-in per output unit is (c_in/G)*K for both conv flavors.
      const double bound = std::sqrt(double(cfg.groups) / (double(l.c_in) * cfg.kernel));
      const uint32_t rows = l.transposed ? l.c_in : l.c_out;
      const uint32_t cols = (l.transposed ? l.c_out : l.c_in) / cfg.groups * cfg.kernel;
      Tensor w = Tensor::zeros(rows, cols);
      for (double& v : w.v) v = rng::uniform(rng, -bound, bound);
      ws.push_back(leaf(std::move(w), true));
      bs.push_back(leaf(Tensor::zeros(l.c_out, 1), true));
    }
  };
  init_stack(analysis_layers(cfg), net.a_w, net.a_b);
  init_stack(synthesis_layers(cfg), net.s_w, net.s_b);
  net.q_logits = leaf(Tensor::zeros(cfg.m_q, kQSupportSize), true);
  return net;
}

std::vector<NodePtr> DistNet::params() const {
  std::vector<NodePtr> out;
  for (const auto& p : a_w) out.push_back(p);
  for (const auto& p : a_b) out.push_back(p);
  for (const auto& p : s_w) out.push_back(p);
  for (const auto& p : s_b) out.push_back(p);
  out.push_back(q_logits);
  return out;
}

NodePtr DistNet::analysis(const NodePtr& x) const {
  auto plan = analysis_layers(cfg);
  NodePtr h = x;
  for (size_t i = 0; i < plan.size(); ++i) {
    h = conv1d(h, a_w[i], a_b[i], plan[i].stride, cfg.groups);
    if (i + 1 < plan.size()) h = channel_shuffle(relu(h), cfg.groups);
  }
  return h;
}

NodePtr DistNet::synthesis(const NodePtr& q) const {
  auto plan = synthesis_layers(cfg);
  NodePtr h = q;
  for (size_t i = 0; i < plan.size(); ++i) {
    h = plan[i].transposed
            ? conv1d_transposed(h, s_w[i], s_b[i], plan[i].stride, cfg.groups)
            : conv1d(h, s_w[i], s_b[i], plan[i].stride, cfg.groups);
    if (i + 1 < plan.size()) h = channel_shuffle(relu(h), cfg.groups);
  }
  return softmax_bins(h);
}

Tensor DistNet::analysis_infer(const Tensor& x) const {
  auto plan = analysis_layers(cfg);
  Tensor h = x;
  for (size_t i = 0; i < plan.size(); ++i) {
    h = conv1d_forward(h, a_w[i]->value, a_b[i]->value, plan[i].stride, cfg.groups);
    if (i + 1 < plan.size()) {
      h = channel_shuffle_forward(relu_forward(h), cfg.groups);
    }
  }
  return h;
}

Tensor DistNet::synthesis_infer(const Tensor& q) const {
  auto plan = synthesis_layers(cfg);
  Tensor h = q;
  for (size_t i = 0; i < plan.size(); ++i) {
    h = plan[i].transposed
            ? conv1d_transposed_forward(h, s_w[i]->value, s_b[i]->value,
                                        plan[i].stride, cfg.groups)
            : conv1d_forward(h, s_w[i]->value, s_b[i]->value, plan[i].stride,
                             cfg.groups);
    if (i + 1 < plan.size()) {
      h = channel_shuffle_forward(relu_forward(h), cfg.groups);
    }
  }
  return softmax_bins_forward(h);
}

std::vector<std::vector<double>> DistNet::q_pmfs() const {
  const Tensor pmf = softmax_bins_forward(q_logits->value);
  std::vector<std::vector<double>> out(pmf.ch);
  for (uint32_t c = 0; c < pmf.ch; ++c) {
    out[c].assign(pmf.v.begin() + size_t(c) * pmf.len,
                  pmf.v.begin() + size_t(c + 1) * pmf.len);
  }
  return out;
}

void DistNet::canonicalize_weights() {
  for (const NodePtr& p : params()) {
    for (double& v : p->value.v) v = double(float(v));
  }
}

Tensor preprocess_bank(const PmfBank& bank) {
  bank.validate();
  const uint32_t b = uint32_t(bank.spec().num_bins());
  Tensor x = Tensor::zeros(uint32_t(bank.channels()), b);
  for (uint32_t c = 0; c < bank.channels(); ++c) {
    for (uint32_t i = 0; i < b; ++i) {
      const double nll = -std::log2(bank.pmfs[c].mass[i] + kPmfFloor);
      x.at(c, i) = std::clamp(nll, 0.0, 10.0);
    }
  }
  return x;
}

Tensor round_clamp_q(const Tensor& q) {
  Tensor out = q;
  for (double& v : out.v) {
    v = std::clamp(round_half_away(v), double(kQSupportMin), double(kQSupportMax));
  }
  return out;
}

double lambda_q(uint32_t trained_h, uint32_t trained_w, uint32_t target_h,
                uint32_t target_w) {
  if (trained_h == 0 || trained_w == 0 || target_h == 0 || target_w == 0) {
    throw BadShapeError("lambda_q: zero dimension");
  }
  return (double(trained_h) * trained_w) / (double(target_h) * target_w);
}

// --- losses ---------------------------------------------------------------------

namespace {

Tensor preprocess_tensor(const Tensor& p) {
  Tensor x = Tensor::zeros(p.ch, p.len);
  for (size_t i = 0; i < p.v.size(); ++i) {
    x.v[i] = std::clamp(-std::log2(p.v[i] + kPmfFloor), 0.0, 10.0);
  }
  return x;
}

}  // namespace

LossParts loss_graph(const DistNet& net, const Tensor& p_true,
                     const Tensor& noise, double pixels_per_channel,
                     double lambda) {
  if (p_true.ch != net.cfg.channels || p_true.len != net.cfg.bins) {
    throw SpecMismatchError("loss graph: bank shape does not match the model");
  }
  NodePtr x = leaf(preprocess_tensor(p_true));
  NodePtr p_node = leaf(p_true);
  NodePtr q = net.analysis(x);
  check_same_shape(q->value, noise, "loss graph noise");
  NodePtr q_tilde = add(q, leaf(noise));
  NodePtr p_hat = net.synthesis(clamp_support(q_tilde));
  LossParts parts;
  parts.rate_y = rate_loss_bits(p_node, p_hat, pixels_per_channel);
  parts.rate_q = q_rate_loss_bits(q_tilde, net.q_logits);
  parts.total = add(parts.rate_y, scale(parts.rate_q, lambda));
  return parts;
}

EvalLoss eval_loss_bits(const DistNet& net, const PmfBank& bank,
                        double pixels_per_channel, double lambda) {
  const Tensor q_hat = round_clamp_q(net.analysis_infer(preprocess_bank(bank)));
  const Tensor p_hat = net.synthesis_infer(q_hat);
  const auto pmfs = net.q_pmfs();

  EvalLoss out;
  for (uint32_t c = 0; c < q_hat.ch; ++c) {
    for (uint32_t i = 0; i < q_hat.len; ++i) {
      out.rate_q -= std::log2(pmfs[c][size_t(int(q_hat.at(c, i)) - kQSupportMin)]);
    }
  }
  const uint32_t b = uint32_t(bank.spec().num_bins());
  for (uint32_t c = 0; c < p_hat.ch; ++c) {
    Pmf rec{bank.spec(), std::vector<double>(p_hat.v.begin() + size_t(c) * b,
                                             p_hat.v.begin() + size_t(c + 1) * b)};
    rec = floored(rec);
    for (uint32_t i = 0; i < b; ++i) {
      const double pv = bank.pmfs[c].mass[i];
      if (pv != 0.0) out.rate_y -= pixels_per_channel * pv * std::log2(rec.mass[i]);
    }
  }
  out.total = out.rate_y + lambda * out.rate_q;
  return out;
}

// --- Adam -----------------------------------------------------------------------

Adam::Adam(std::vector<NodePtr> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (const NodePtr& p : params_) {
    m_.push_back(Tensor::zeros(p->value.ch, p->value.len));
    v_.push_back(Tensor::zeros(p->value.ch, p->value.len));
  }
}

void Adam::zero_grad() {
  for (const NodePtr& p : params_) {
    std::fill(p->grad.v.begin(), p->grad.v.end(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& value = params_[i]->value;
    const Tensor& grad = params_[i]->grad;
    for (size_t j = 0; j < value.v.size(); ++j) {
      const double g = grad.v[j];
      m_[i].v[j] = cfg_.beta1 * m_[i].v[j] + (1.0 - cfg_.beta1) * g;
      v_[i].v[j] = cfg_.beta2 * v_[i].v[j] + (1.0 - cfg_.beta2) * g * g;
      const double mh = m_[i].v[j] / bc1;
      const double vh = v_[i].v[j] / bc2;
      value.v[j] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }
}

// --- training loop ----------------------------------------------------------------

namespace {

Tensor bank_tensor(const PmfBank& bank) {
  const uint32_t b = uint32_t(bank.spec().num_bins());
  Tensor t = Tensor::zeros(uint32_t(bank.channels()), b);
  for (uint32_t c = 0; c < bank.channels(); ++c) {
    for (uint32_t i = 0; i < b; ++i) t.at(c, i) = bank.pmfs[c].mass[i];
  }
  return t;
}

}  // namespace

TrainResult train(DistNet& net, std::span<const PmfBank> train_banks,
                  std::span<const PmfBank> val_banks,
                  double pixels_per_channel, const TrainConfig& cfg) {
  if (train_banks.empty() || val_banks.empty()) {
    throw BadShapeError("training needs non-empty train and validation sets");
  }
  std::vector<Tensor> train_p;
  train_p.reserve(train_banks.size());
  for (const PmfBank& b : train_banks) train_p.push_back(bank_tensor(b));

  std::mt19937_64 rng(cfg.seed);
  Adam opt(net.params(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});

  auto validation = [&]() {
    double sum = 0;
    for (const PmfBank& b : val_banks) {
      sum += eval_loss_bits(net, b, pixels_per_channel, cfg.lambda).total;
    }
    return sum / double(val_banks.size());
  };

  TrainResult res;
  double best_val = std::numeric_limits<double>::infinity();
  double best_seen = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_weights;
  uint32_t stale = 0;
  const uint32_t noise_ch = net.cfg.m_q;
  const uint32_t noise_len = net.cfg.bins / kQDownscale;

  for (uint32_t step = 1; step <= cfg.max_steps; ++step) {
    opt.zero_grad();
    NodePtr total;
    double ry = 0, rq = 0;
    for (uint32_t k = 0; k < cfg.batch_size; ++k) {
      const size_t idx = size_t(rng() % train_p.size());
      Tensor noise = Tensor::zeros(noise_ch, noise_len);
      for (double& v : noise.v) v = rng::uniform01(rng) - 0.5;
      LossParts parts =
          loss_graph(net, train_p[idx], noise, pixels_per_channel, cfg.lambda);
      ry += parts.rate_y->value.v[0];
      rq += parts.rate_q->value.v[0];
      total = total ? add(total, parts.total) : parts.total;
    }
    total = scale(total, 1.0 / cfg.batch_size);
    const double loss = total->value.v[0];
    if (!std::isfinite(loss)) {
      throw DivergedError("non-finite training loss at step " +
                          std::to_string(step));
    }
    backward(total);
    opt.step();
    res.steps = step;

    if (step % cfg.eval_every == 0) {
      const double val = validation();
      if (!std::isfinite(val)) {
        throw DivergedError("non-finite validation loss at step " +
                            std::to_string(step));
      }
      res.log.push_back({step, opt.lr(), loss, ry / cfg.batch_size,
                         rq / cfg.batch_size, val});
      if (val < best_seen) {
        best_seen = val;
        best_weights.clear();
        for (const NodePtr& p : net.params()) best_weights.push_back(p->value);
      }
      if (val < best_val * (1.0 - cfg.plateau_rel)) {
        best_val = val;
        stale = 0;
      } else {
        ++stale;
      }
      if (stale >= cfg.plateau_patience) {
        if (res.decays >= cfg.max_decays) break;
        opt.set_lr(opt.lr() * cfg.decay);
        ++res.decays;
        stale = 0;
      }
    }
  }

  if (!best_weights.empty()) {
    const std::vector<NodePtr> params = net.params();
    for (size_t i = 0; i < params.size(); ++i) params[i]->value = best_weights[i];
  }
  net.canonicalize_weights();
  res.best_val = best_seen;
  return res;
}

}  // namespace lc::nn
