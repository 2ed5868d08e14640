#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "envtrack/rng.hpp"
#include "envtrack/tensor.hpp"

namespace envtrack {

// Dual-path match/mismatch network: EEG goes conv -> two time-distributed
// dense layers, the envelope goes conv -> LSTM, both end in unit-norm
// embedding columns compared step-wise by cosine similarity.

struct NetworkConfig {
  int window_samples = 640;
  int eeg_channels = 64;
  int conv_kernel = 10;
  int conv_stride = 3;
  int conv_filters = 8;
  int dense1_units = 16;
  int embed_dim = 16;
  int lstm_hidden = 16;
  std::uint64_t seed = 1;

  void validate() const {
    if (window_samples < 1 || eeg_channels < 1 || conv_kernel < 1 || conv_filters < 1 ||
        dense1_units < 1 || embed_dim < 1 || lstm_hidden < 1) {
      throw std::invalid_argument("NetworkConfig: all layer extents must be >= 1");
    }
    if (conv_stride < 1) throw std::invalid_argument("NetworkConfig: conv_stride must be >= 1");
    if (conv_kernel > window_samples) {
      throw std::invalid_argument("NetworkConfig: conv_kernel " + std::to_string(conv_kernel) +
                                  " exceeds window_samples " + std::to_string(window_samples));
    }
    if (lstm_hidden != embed_dim) {
      throw std::invalid_argument(
          "NetworkConfig: lstm_hidden (" + std::to_string(lstm_hidden) +
          ") must equal embed_dim (" + std::to_string(embed_dim) +
          "): both paths feed the same cosine similarity");
    }
  }

  int steps() const { return (window_samples - conv_kernel) / conv_stride + 1; }
};

struct LstmWeights {
  Tensor W_i, W_f, W_c, W_o;  // hidden x in_dim
  Tensor U_i, U_f, U_c, U_o;  // hidden x hidden
  Tensor b_i, b_f, b_c, b_o;  // hidden
};

struct NetworkParams {
  NetworkConfig cfg;
  Tensor eeg_conv_W, eeg_conv_b;
  Tensor eeg_dense1_W, eeg_dense1_b;
  Tensor eeg_dense2_W, eeg_dense2_b;
  Tensor env_conv_W, env_conv_b;
  LstmWeights lstm;

  // Canonical tensor order; containers, the optimizer and the freeze filter
  // all key off these names.
  std::vector<std::pair<std::string, Tensor*>> named() {
    return {{"eeg_conv.W", &eeg_conv_W},     {"eeg_conv.b", &eeg_conv_b},
            {"eeg_dense1.W", &eeg_dense1_W}, {"eeg_dense1.b", &eeg_dense1_b},
            {"eeg_dense2.W", &eeg_dense2_W}, {"eeg_dense2.b", &eeg_dense2_b},
            {"env_conv.W", &env_conv_W},     {"env_conv.b", &env_conv_b},
            {"lstm.W_i", &lstm.W_i},         {"lstm.W_f", &lstm.W_f},
            {"lstm.W_c", &lstm.W_c},         {"lstm.W_o", &lstm.W_o},
            {"lstm.U_i", &lstm.U_i},         {"lstm.U_f", &lstm.U_f},
            {"lstm.U_c", &lstm.U_c},         {"lstm.U_o", &lstm.U_o},
            {"lstm.b_i", &lstm.b_i},         {"lstm.b_f", &lstm.b_f},
            {"lstm.b_c", &lstm.b_c},         {"lstm.b_o", &lstm.b_o}};
  }
  std::vector<std::pair<std::string, const Tensor*>> named() const {
    auto* self = const_cast<NetworkParams*>(this);
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [name, t] : self->named()) out.emplace_back(name, t);
    return out;
  }

  std::int64_t count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : named()) n += t->size();
    return n;
  }

  NetworkParams clone() const {
    NetworkParams out;
    out.cfg = cfg;
    auto src = named();
    auto dst = out.named();
    for (std::size_t i = 0; i < src.size(); ++i) {
      *dst[i].second = src[i].second->clone(src[i].second->requires_grad());
    }
    return out;
  }
};

namespace detail {

inline Tensor glorot(Shape shape, int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  return Tensor::uniform(std::move(shape), -limit, limit, rng, true);
}

}  // namespace detail

// Weight draw order is fixed (the named() order) so a seed pins every value.
inline NetworkParams build_network(const NetworkConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int F = cfg.conv_filters, K = cfg.conv_kernel, C = cfg.eeg_channels;
  const int D1 = cfg.dense1_units, E = cfg.embed_dim, H = cfg.lstm_hidden;

  NetworkParams p;
  p.cfg = cfg;
  p.eeg_conv_W = detail::glorot({F, C, K}, C * K, F * K, rng);
  p.eeg_conv_b = Tensor::zeros({F}, true);
  p.eeg_dense1_W = detail::glorot({D1, F}, F, D1, rng);
  p.eeg_dense1_b = Tensor::zeros({D1}, true);
  p.eeg_dense2_W = detail::glorot({E, D1}, D1, E, rng);
  p.eeg_dense2_b = Tensor::zeros({E}, true);
  p.env_conv_W = detail::glorot({F, 1, K}, K, F * K, rng);
  p.env_conv_b = Tensor::zeros({F}, true);
  p.lstm.W_i = detail::glorot({H, F}, F, H, rng);
  p.lstm.W_f = detail::glorot({H, F}, F, H, rng);
  p.lstm.W_c = detail::glorot({H, F}, F, H, rng);
  p.lstm.W_o = detail::glorot({H, F}, F, H, rng);
  p.lstm.U_i = detail::glorot({H, H}, H, H, rng);
  p.lstm.U_f = detail::glorot({H, H}, H, H, rng);
  p.lstm.U_c = detail::glorot({H, H}, H, H, rng);
  p.lstm.U_o = detail::glorot({H, H}, H, H, rng);
  p.lstm.b_i = Tensor::zeros({H}, true);
  // Forget gate starts open so early training does not wipe the cell state.
  p.lstm.b_f = Tensor::filled({H}, 1.0, true);
  p.lstm.b_c = Tensor::zeros({H}, true);
  p.lstm.b_o = Tensor::zeros({H}, true);
  return p;
}

// Full LSTM pass recorded as a single tape entry with a hand-written
// backward. Per-step tape records would dominate the training profile; one
// fused record keeps the tape length independent of sequence length.
// x is (steps x in_dim), returns (steps x hidden) of hidden states.
// h0/c0 default to zeros when left undefined.
inline Tensor lstm_forward(Tape& tape, const Tensor& x, const LstmWeights& w,
                           Tensor h0 = Tensor(), Tensor c0 = Tensor()) {
  if (x.ndim() != 2) {
    throw std::invalid_argument("lstm_forward: expected 2-D (steps x in_dim) input, got " +
                                shape_str(x.shape()));
  }
  const int S = x.dim(0), D = x.dim(1), H = w.W_i.dim(0);
  if (w.W_i.ndim() != 2 || w.W_i.dim(1) != D) {
    throw std::invalid_argument("lstm_forward: W_i shape " + shape_str(w.W_i.shape()) +
                                " does not accept in_dim " + std::to_string(D));
  }
  if (w.U_i.dim(0) != H || w.U_i.dim(1) != H || w.b_i.dim(0) != H) {
    throw std::invalid_argument("lstm_forward: recurrent shapes disagree with hidden size " +
                                std::to_string(H));
  }
  if (h0.defined() && (h0.ndim() != 1 || h0.dim(0) != H)) {
    throw std::invalid_argument("lstm_forward: h0 shape " + shape_str(h0.shape()) +
                                " does not match hidden size " + std::to_string(H));
  }
  if (c0.defined() && (c0.ndim() != 1 || c0.dim(0) != H)) {
    throw std::invalid_argument("lstm_forward: c0 shape " + shape_str(c0.shape()) +
                                " does not match hidden size " + std::to_string(H));
  }

  struct Saved {
    // Per step: gate activations and cell values needed by the backward.
    std::vector<double> i, f, g, o, c, tc;  // S*H each; g = cell candidate
  };
  auto sv = std::make_shared<Saved>();
  const std::size_t SH = static_cast<std::size_t>(S) * H;
  sv->i.resize(SH);
  sv->f.resize(SH);
  sv->g.resize(SH);
  sv->o.resize(SH);
  sv->c.resize(SH);
  sv->tc.resize(SH);

  const bool rg = x.requires_grad() || w.W_i.requires_grad() || w.U_i.requires_grad() ||
                  w.b_i.requires_grad() || (h0.defined() && h0.requires_grad()) ||
                  (c0.defined() && c0.requires_grad());
  Tensor out = Tensor::result({S, H}, rg);

  {
    std::vector<double> h(static_cast<std::size_t>(H), 0.0);
    std::vector<double> c(static_cast<std::size_t>(H), 0.0);
    if (h0.defined()) h.assign(h0.data().begin(), h0.data().end());
    if (c0.defined()) c.assign(c0.data().begin(), c0.data().end());

    const double* Wi = w.W_i.data().data();
    const double* Wf = w.W_f.data().data();
    const double* Wc = w.W_c.data().data();
    const double* Wo = w.W_o.data().data();
    const double* Ui = w.U_i.data().data();
    const double* Uf = w.U_f.data().data();
    const double* Uc = w.U_c.data().data();
    const double* Uo = w.U_o.data().data();
    const double* bi = w.b_i.data().data();
    const double* bf = w.b_f.data().data();
    const double* bc = w.b_c.data().data();
    const double* bo = w.b_o.data().data();
    const double* xd = x.data().data();
    double* od = out.mutable_data().data();

    auto matvec = [](const double* M, const double* v, int rows, int cols, int r) {
      const double* row = M + static_cast<std::size_t>(r) * cols;
      double acc = 0.0;
      for (int j = 0; j < cols; ++j) acc += row[j] * v[j];
      return acc;
    };

    for (int t = 0; t < S; ++t) {
      const double* xt = xd + static_cast<std::size_t>(t) * D;
      const std::size_t base = static_cast<std::size_t>(t) * H;
      for (int r = 0; r < H; ++r) {
        const double ai = matvec(Wi, xt, H, D, r) + matvec(Ui, h.data(), H, H, r) + bi[r];
        const double af = matvec(Wf, xt, H, D, r) + matvec(Uf, h.data(), H, H, r) + bf[r];
        const double ac = matvec(Wc, xt, H, D, r) + matvec(Uc, h.data(), H, H, r) + bc[r];
        const double ao = matvec(Wo, xt, H, D, r) + matvec(Uo, h.data(), H, H, r) + bo[r];
        sv->i[base + r] = 1.0 / (1.0 + std::exp(-ai));
        sv->f[base + r] = 1.0 / (1.0 + std::exp(-af));
        sv->g[base + r] = std::tanh(ac);
        sv->o[base + r] = 1.0 / (1.0 + std::exp(-ao));
      }
      for (int r = 0; r < H; ++r) {
        const double cv = sv->f[base + r] * c[static_cast<std::size_t>(r)] +
                          sv->i[base + r] * sv->g[base + r];
        c[static_cast<std::size_t>(r)] = cv;
        sv->c[base + r] = cv;
        const double tcv = std::tanh(cv);
        sv->tc[base + r] = tcv;
        const double hv = sv->o[base + r] * tcv;
        h[static_cast<std::size_t>(r)] = hv;
        od[base + r] = hv;
      }
    }
  }
  detail::check_finite("lstm_forward", out.data());
  if (!rg) return out;

  tape.record({x, w.W_i, w.W_f, w.W_c, w.W_o, w.U_i, w.U_f, w.U_c, w.U_o, w.b_i, w.b_f, w.b_c,
               w.b_o, h0, c0},
              [x, w, h0, c0, out, sv, S, D, H](Tape& tp) {
    const std::vector<double>* gout = tp.find_grad(out);
    if (!gout) return;
    const double* gH = gout->data();
    const double* xd = x.data().data();
    const double* od = out.data().data();

    const std::size_t HD = static_cast<std::size_t>(H) * D;
    const std::size_t HH = static_cast<std::size_t>(H) * H;
    std::vector<double> gWi(HD, 0.0), gWf(HD, 0.0), gWc(HD, 0.0), gWo(HD, 0.0);
    std::vector<double> gUi(HH, 0.0), gUf(HH, 0.0), gUc(HH, 0.0), gUo(HH, 0.0);
    std::vector<double> gbi(static_cast<std::size_t>(H), 0.0), gbf(gbi), gbc(gbi), gbo(gbi);
    std::vector<double> gx(static_cast<std::size_t>(S) * D, 0.0);

    std::vector<double> dh(static_cast<std::size_t>(H), 0.0);
    std::vector<double> dc(static_cast<std::size_t>(H), 0.0);
    std::vector<double> dai(static_cast<std::size_t>(H)), daf(dai), dac(dai), dao(dai);

    const double* Wi = w.W_i.data().data();
    const double* Wf = w.W_f.data().data();
    const double* Wc = w.W_c.data().data();
    const double* Wo = w.W_o.data().data();
    const double* Ui = w.U_i.data().data();
    const double* Uf = w.U_f.data().data();
    const double* Uc = w.U_c.data().data();
    const double* Uo = w.U_o.data().data();

    for (int t = S - 1; t >= 0; --t) {
      const std::size_t base = static_cast<std::size_t>(t) * H;
      const double* xt = xd + static_cast<std::size_t>(t) * D;
      // h_{t-1}: previous output row, or h0/zeros at the first step.
      const double* hprev = nullptr;
      std::vector<double> hprev_store;
      if (t > 0) {
        hprev = od + (base - H);
      } else if (h0.defined()) {
        hprev = h0.data().data();
      } else {
        hprev_store.assign(static_cast<std::size_t>(H), 0.0);
        hprev = hprev_store.data();
      }
      const double cprev_fallback = 0.0;
      auto cprev = [&](int r) -> double {
        if (t > 0) return sv->c[base - H + r];
        if (c0.defined()) return c0.data()[static_cast<std::size_t>(r)];
        return cprev_fallback;
      };

      for (int r = 0; r < H; ++r) {
        const double dht = dh[static_cast<std::size_t>(r)] + gH[base + r];
        const double ov = sv->o[base + r];
        const double tcv = sv->tc[base + r];
        const double dct = dc[static_cast<std::size_t>(r)] + dht * ov * (1.0 - tcv * tcv);
        const double iv = sv->i[base + r];
        const double fv = sv->f[base + r];
        const double gv = sv->g[base + r];
        dao[static_cast<std::size_t>(r)] = dht * tcv * ov * (1.0 - ov);
        daf[static_cast<std::size_t>(r)] = dct * cprev(r) * fv * (1.0 - fv);
        dai[static_cast<std::size_t>(r)] = dct * gv * iv * (1.0 - iv);
        dac[static_cast<std::size_t>(r)] = dct * iv * (1.0 - gv * gv);
        dc[static_cast<std::size_t>(r)] = dct * fv;  // flows to step t-1
      }

      for (int r = 0; r < H; ++r) {
        const double vi = dai[static_cast<std::size_t>(r)];
        const double vf = daf[static_cast<std::size_t>(r)];
        const double vc = dac[static_cast<std::size_t>(r)];
        const double vo = dao[static_cast<std::size_t>(r)];
        gbi[static_cast<std::size_t>(r)] += vi;
        gbf[static_cast<std::size_t>(r)] += vf;
        gbc[static_cast<std::size_t>(r)] += vc;
        gbo[static_cast<std::size_t>(r)] += vo;
        double* gWi_r = gWi.data() + static_cast<std::size_t>(r) * D;
        double* gWf_r = gWf.data() + static_cast<std::size_t>(r) * D;
        double* gWc_r = gWc.data() + static_cast<std::size_t>(r) * D;
        double* gWo_r = gWo.data() + static_cast<std::size_t>(r) * D;
        for (int j = 0; j < D; ++j) {
          gWi_r[j] += vi * xt[j];
          gWf_r[j] += vf * xt[j];
          gWc_r[j] += vc * xt[j];
          gWo_r[j] += vo * xt[j];
        }
        double* gUi_r = gUi.data() + static_cast<std::size_t>(r) * H;
        double* gUf_r = gUf.data() + static_cast<std::size_t>(r) * H;
        double* gUc_r = gUc.data() + static_cast<std::size_t>(r) * H;
        double* gUo_r = gUo.data() + static_cast<std::size_t>(r) * H;
        for (int j = 0; j < H; ++j) {
          gUi_r[j] += vi * hprev[j];
          gUf_r[j] += vf * hprev[j];
          gUc_r[j] += vc * hprev[j];
          gUo_r[j] += vo * hprev[j];
        }
      }

      // dx_t and dh_{t-1} via the transposed weight matrices.
      double* gxt = gx.data() + static_cast<std::size_t>(t) * D;
      for (int j = 0; j < D; ++j) {
        double acc = 0.0;
        for (int r = 0; r < H; ++r) {
          acc += Wi[static_cast<std::size_t>(r) * D + j] * dai[static_cast<std::size_t>(r)] +
                 Wf[static_cast<std::size_t>(r) * D + j] * daf[static_cast<std::size_t>(r)] +
                 Wc[static_cast<std::size_t>(r) * D + j] * dac[static_cast<std::size_t>(r)] +
                 Wo[static_cast<std::size_t>(r) * D + j] * dao[static_cast<std::size_t>(r)];
        }
        gxt[j] += acc;
      }
      for (int j = 0; j < H; ++j) {
        double acc = 0.0;
        for (int r = 0; r < H; ++r) {
          acc += Ui[static_cast<std::size_t>(r) * H + j] * dai[static_cast<std::size_t>(r)] +
                 Uf[static_cast<std::size_t>(r) * H + j] * daf[static_cast<std::size_t>(r)] +
                 Uc[static_cast<std::size_t>(r) * H + j] * dac[static_cast<std::size_t>(r)] +
                 Uo[static_cast<std::size_t>(r) * H + j] * dao[static_cast<std::size_t>(r)];
        }
        dh[static_cast<std::size_t>(j)] = acc;
      }
    }

    auto flush = [&tp](const Tensor& t, const std::vector<double>& g) {
      if (!t.defined() || !t.requires_grad()) return;
      auto& dst = tp.grad(t);
      for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    };
    flush(x, gx);
    flush(w.W_i, gWi);
    flush(w.W_f, gWf);
    flush(w.W_c, gWc);
    flush(w.W_o, gWo);
    flush(w.U_i, gUi);
    flush(w.U_f, gUf);
    flush(w.U_c, gUc);
    flush(w.U_o, gUo);
    flush(w.b_i, gbi);
    flush(w.b_f, gbf);
    flush(w.b_c, gbc);
    flush(w.b_o, gbo);
    flush(h0, dh);
    flush(c0, dc);
  });
  return out;
}

inline Tensor eeg_path_forward(Tape& tape, const Tensor& eeg, const NetworkParams& p) {
  if (eeg.ndim() != 2 || eeg.dim(0) != p.cfg.eeg_channels || eeg.dim(1) != p.cfg.window_samples) {
    throw std::invalid_argument("eeg_path_forward: input shape " + shape_str(eeg.shape()) +
                                " does not match config (" + std::to_string(p.cfg.eeg_channels) +
                                "x" + std::to_string(p.cfg.window_samples) + ")");
  }
  Tensor c = conv1d(tape, eeg, p.eeg_conv_W, p.eeg_conv_b, p.cfg.conv_stride);
  // Time-distributed dense = one matmul across the step axis.
  Tensor d1 = relu(tape, add_col_bias(tape, matmul(tape, p.eeg_dense1_W, c), p.eeg_dense1_b));
  Tensor d2 = add_col_bias(tape, matmul(tape, p.eeg_dense2_W, d1), p.eeg_dense2_b);
  return unit_normalize_columns(tape, d2);
}

inline Tensor env_path_forward(Tape& tape, const Tensor& env, const NetworkParams& p) {
  if (env.ndim() != 2 || env.dim(0) != 1 || env.dim(1) != p.cfg.window_samples) {
    throw std::invalid_argument("env_path_forward: input shape " + shape_str(env.shape()) +
                                " does not match config (1x" +
                                std::to_string(p.cfg.window_samples) + ")");
  }
  Tensor c = conv1d(tape, env, p.env_conv_W, p.env_conv_b, p.cfg.conv_stride);
  Tensor h = lstm_forward(tape, transpose(tape, c), p.lstm);
  return unit_normalize_columns(tape, transpose(tape, h));
}

inline Tensor similarity_scores(Tape& tape, const Tensor& a, const Tensor& b) {
  return colwise_dot(tape, a, b);
}

inline constexpr double kProbClamp = 1e-7;

// BCE on p_t = clamp((1+s_t)/2, 1e-7, 1-1e-7), averaged over steps. The
// clamp both guards the logs and zeroes the gradient where it saturates.
inline Tensor bce_loss(Tape& tape, const Tensor& scores, int label) {
  if (scores.ndim() != 1) {
    throw std::invalid_argument("bce_loss: expected 1-D scores, got " +
                                shape_str(scores.shape()));
  }
  if (label != 0 && label != 1) {
    throw std::invalid_argument("bce_loss: label must be 0 or 1, got " + std::to_string(label));
  }
  const int n = scores.dim(0);
  Tensor y = Tensor::result({1}, scores.requires_grad());
  double acc = 0.0;
  for (int t = 0; t < n; ++t) {
    double pv = (1.0 + scores(t)) / 2.0;
    pv = std::min(std::max(pv, kProbClamp), 1.0 - kProbClamp);
    acc += label == 1 ? -std::log(pv) : -std::log(1.0 - pv);
  }
  y.mutable_data()[0] = acc / n;
  detail::check_finite("bce_loss", y.data());
  if (!scores.requires_grad()) return y;
  tape.record({scores}, [scores, y, label, n](Tape& tp) {
    const std::vector<double>* gy = tp.find_grad(y);
    if (!gy) return;
    auto& gs = tp.grad(scores);
    const double g = (*gy)[0] / n;
    for (int t = 0; t < n; ++t) {
      const double pv = (1.0 + scores(t)) / 2.0;
      if (pv <= kProbClamp || pv >= 1.0 - kProbClamp) continue;  // clamped flat
      // dloss/ds = dloss/dp * dp/ds, dp/ds = 1/2
      const double dldp = label == 1 ? -1.0 / pv : 1.0 / (1.0 - pv);
      gs[static_cast<std::size_t>(t)] += g * dldp * 0.5;
    }
  });
  return y;
}

struct Decision {
  int label;          // 1 matched, 0 mismatched
  double confidence;  // mean per-step matched probability
};

inline Decision decide(const Tensor& scores) {
  if (!scores.defined() || scores.size() == 0) {
    throw std::invalid_argument("decide: empty score vector");
  }
  double acc = 0.0;
  for (double s : scores.data()) {
    double pv = (1.0 + s) / 2.0;
    pv = std::min(std::max(pv, kProbClamp), 1.0 - kProbClamp);
    acc += pv;
  }
  const double conf = acc / static_cast<double>(scores.size());
  return {conf >= 0.5 ? 1 : 0, conf};
}

// Convenience wrapper used by both training and evaluation.
inline Tensor forward_scores(Tape& tape, const NetworkParams& p, const Tensor& eeg,
                             const Tensor& env) {
  Tensor a = eeg_path_forward(tape, eeg, p);
  Tensor b = env_path_forward(tape, env, p);
  return similarity_scores(tape, a, b);
}

}  // namespace envtrack
