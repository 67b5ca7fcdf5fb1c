#pragma once

// Toy-scale, forward-pass-only reference of the boundary-proposal gating
// mechanism: projection heads over intermediate feature maps, a transpose-conv
// proposal network producing ROI sequences, a BiLSTM scorer, a learned
// weighted mask, and a soft gate over the backbone class posteriors. Also the
// dilated depthwise residual block and the focal loss with its analytic
// gradient.
//
// Weights are loaded from a JSON manifest or seeded randomly; there is no
// training here.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sedpost/core.hpp"
#include "sedpost/errors.hpp"

namespace sedpost::bpn {

// ---------------------------------------------------------------------------
// Dense tensors with a declared axis layout (row-major, up to rank 4)

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims) : shape(std::move(dims)) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        data.assign(n, 0.0);
    }

    std::size_t rank() const { return shape.size(); }
    std::size_t size() const { return data.size(); }

    double& operator()(std::size_t i) { return data[i]; }
    double operator()(std::size_t i) const { return data[i]; }
    double& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
};

inline void require_shape(const Tensor& t, std::span<const std::size_t> expected,
                          const std::string& stage) {
    bool ok = t.rank() == expected.size();
    for (std::size_t i = 0; ok && i < expected.size(); ++i) ok = t.shape[i] == expected[i];
    if (!ok) {
        auto fmt = [](std::span<const std::size_t> dims) {
            std::string s = "(";
            for (std::size_t i = 0; i < dims.size(); ++i)
                s += (i ? "," : "") + std::to_string(dims[i]);
            return s + ")";
        };
        throw ShapeError(stage + ": expected shape " + fmt(expected) + ", got " +
                         fmt(t.shape));
    }
}

// ---------------------------------------------------------------------------
// Activations and normalisation

// Exact Gaussian-CDF GELU: x * Phi(x).
inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Inference-mode batch norm: per-channel affine with stored statistics.
struct BatchNorm {
    std::vector<double> gamma, beta, mean, var;
    double eps = 1e-5;

    static BatchNorm identity(std::size_t channels) {
        BatchNorm bn;
        bn.gamma.assign(channels, 1.0);
        bn.beta.assign(channels, 0.0);
        bn.mean.assign(channels, 0.0);
        bn.var.assign(channels, 1.0);
        bn.eps = 0.0;
        return bn;
    }

    std::size_t channels() const { return gamma.size(); }

    double apply(std::size_t c, double x) const {
        return gamma[c] * (x - mean[c]) / std::sqrt(var[c] + eps) + beta[c];
    }
};

// ---------------------------------------------------------------------------
// Dilated depthwise residual block (backbone modification, toy scale)

struct DepthwiseLayer {
    int kernel = 3;
    int dilation = 1;
    std::vector<double> weight;  // [channel][tap]
    BatchNorm bn;
};

struct DilatedBlockWeights {
    std::vector<DepthwiseLayer> layers;  // dilations 2, 4, 8
};

inline int dilated_block_receptive_field(int kernel) {
    return 1 + (kernel - 1) * (2 + 4 + 8);
}

// Three depthwise convolutions with dilations 2/4/8, each wrapped as
// x + bn(gelu(conv(x))). Zero same-padding keeps T; spatial dropout is the
// identity at inference.
inline Tensor dilated_depthwise_block(const Tensor& x, const DilatedBlockWeights& w) {
    if (x.rank() != 2) throw ShapeError("dilated block: input must be (C,T)");
    const std::size_t channels = x.shape[0];
    const auto t_len = static_cast<std::ptrdiff_t>(x.shape[1]);

    Tensor current = x;
    for (const DepthwiseLayer& layer : w.layers) {
        if (layer.weight.size() != channels * static_cast<std::size_t>(layer.kernel))
            throw ShapeError("dilated block: layer weight count does not match channels");
        if (layer.bn.channels() != channels)
            throw ShapeError("dilated block: batch-norm channel mismatch");
        if (layer.kernel < 1 || layer.kernel % 2 == 0)
            throw InvalidParameter("dilated block: kernel must be odd");
        const int half = layer.kernel / 2;
        Tensor next = current;
        for (std::size_t c = 0; c < channels; ++c) {
            const double* taps = layer.weight.data() + c * static_cast<std::size_t>(layer.kernel);
            for (std::ptrdiff_t t = 0; t < t_len; ++t) {
                double acc = 0.0;
                for (int k = 0; k < layer.kernel; ++k) {
                    const std::ptrdiff_t src = t + static_cast<std::ptrdiff_t>(k - half) *
                                                       layer.dilation;
                    if (src < 0 || src >= t_len) continue;
                    acc += taps[k] * current(c, static_cast<std::size_t>(src));
                }
                next(c, static_cast<std::size_t>(t)) =
                    current(c, static_cast<std::size_t>(t)) + layer.bn.apply(c, gelu(acc));
            }
        }
        current = std::move(next);
    }
    return current;
}

// ---------------------------------------------------------------------------
// Intermediate projection head

struct Conv1x1 {
    std::size_t in_channels = 0, out_channels = 0;
    std::vector<double> weight;  // [out][in]
    std::vector<double> bias;    // [out]
};

struct ProjectionHeadWeights {
    Conv1x1 conv;
    BatchNorm bn;
};

// conv 1x1 -> batch norm -> GELU -> max pool over time (replicate padding).
inline Tensor projection_head(const Tensor& fmap, const ProjectionHeadWeights& w,
                              int pool_kernel = 3) {
    if (fmap.rank() != 3) throw ShapeError("projection_head: input must be (C,T,F)");
    if (fmap.shape[0] != w.conv.in_channels)
        throw ShapeError("projection_head: input has " + std::to_string(fmap.shape[0]) +
                         " channels, conv expects " + std::to_string(w.conv.in_channels));
    if (pool_kernel < 1 || pool_kernel % 2 == 0)
        throw InvalidParameter("projection_head: pool kernel must be odd");
    const std::size_t t_len = fmap.shape[1];
    const std::size_t f_len = fmap.shape[2];
    const std::size_t out_c = w.conv.out_channels;

    Tensor mixed({out_c, t_len, f_len});
    const std::size_t plane = t_len * f_len;
    for (std::size_t co = 0; co < out_c; ++co) {
        const double* row = w.conv.weight.data() + co * w.conv.in_channels;
        double* out_plane = mixed.data.data() + co * plane;
        std::fill(out_plane, out_plane + plane, w.conv.bias[co]);
        for (std::size_t ci = 0; ci < w.conv.in_channels; ++ci) {
            const double wv = row[ci];
            const double* in_plane = fmap.data.data() + ci * plane;
            for (std::size_t i = 0; i < plane; ++i) out_plane[i] += wv * in_plane[i];
        }
        for (std::size_t i = 0; i < plane; ++i)
            out_plane[i] = gelu(w.bn.apply(co, out_plane[i]));
    }

    const int half = pool_kernel / 2;
    Tensor pooled({out_c, t_len, f_len});
    const auto t_last = static_cast<std::ptrdiff_t>(t_len) - 1;
    for (std::size_t c = 0; c < out_c; ++c) {
        for (std::size_t t = 0; t < t_len; ++t) {
            for (std::size_t f = 0; f < f_len; ++f) {
                double best = -std::numeric_limits<double>::infinity();
                for (int k = -half; k <= half; ++k) {
                    const std::ptrdiff_t src = std::clamp<std::ptrdiff_t>(
                        static_cast<std::ptrdiff_t>(t) + k, 0, t_last);
                    best = std::max(best, mixed(c, static_cast<std::size_t>(src), f));
                }
                pooled(c, t, f) = best;
            }
        }
    }
    return pooled;
}

// ---------------------------------------------------------------------------
// Proposal network

struct TransposeConvRoi {
    std::size_t in_channels = 0, out_channels = 0;
    int kernel = 1;
    std::vector<double> weight;  // [out][in][tap]
    std::vector<double> bias;    // [out]
};

struct ProposalWeights {
    TransposeConvRoi ct1;
    BatchNorm bn;
    TransposeConvRoi ct2;
};

namespace detail {

// Transpose convolution along the ROI axis, stride 1, no padding:
// R_out = R_in + kernel - 1. Input/output laid out (H, C, R, T).
inline Tensor transpose_conv_roi(const Tensor& in, const TransposeConvRoi& w,
                                 const std::string& stage) {
    if (in.rank() != 4) throw ShapeError(stage + ": input must be (H,C,R,T)");
    if (in.shape[1] != w.in_channels)
        throw ShapeError(stage + ": input has " + std::to_string(in.shape[1]) +
                         " channels, expected " + std::to_string(w.in_channels));
    const std::size_t heads = in.shape[0];
    const std::size_t r_in = in.shape[2];
    const std::size_t t_len = in.shape[3];
    const std::size_t r_out = r_in + static_cast<std::size_t>(w.kernel) - 1;

    Tensor out({heads, w.out_channels, r_out, t_len});
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t co = 0; co < w.out_channels; ++co) {
            for (std::size_t r = 0; r < r_out; ++r) {
                for (std::size_t t = 0; t < t_len; ++t) out(h, co, r, t) = w.bias[co];
            }
            for (std::size_t ci = 0; ci < w.in_channels; ++ci) {
                const double* taps =
                    w.weight.data() + (co * w.in_channels + ci) * static_cast<std::size_t>(w.kernel);
                for (std::size_t ri = 0; ri < r_in; ++ri) {
                    for (int k = 0; k < w.kernel; ++k) {
                        const std::size_t r = ri + static_cast<std::size_t>(k);
                        for (std::size_t t = 0; t < t_len; ++t)
                            out(h, co, r, t) += taps[k] * in(h, ci, ri, t);
                    }
                }
            }
        }
    }
    return out;
}

} // namespace detail

// Grows a unit ROI axis into R = k1 + k2 - 1 proposals per head:
// transpose conv (k1) -> GELU -> batch norm -> transpose conv (k2).
// Accepts (H,C,T) or (H,C,1,T); returns (H, R, C_out, T).
inline Tensor proposal_network(const Tensor& stacked, const ProposalWeights& w) {
    Tensor in;
    if (stacked.rank() == 3) {
        in = Tensor({stacked.shape[0], stacked.shape[1], 1, stacked.shape[2]});
        in.data = stacked.data;  // same row-major layout with a unit ROI axis
    } else if (stacked.rank() == 4) {
        if (stacked.shape[2] != 1)
            throw ShapeError("proposal_network: initial ROI axis must have length 1, got " +
                             std::to_string(stacked.shape[2]));
        in = stacked;
    } else {
        throw ShapeError("proposal_network: input must be (H,C,T) or (H,C,1,T)");
    }

    Tensor mid = detail::transpose_conv_roi(in, w.ct1, "proposal_network ct1");
    if (w.bn.channels() != w.ct1.out_channels)
        throw ShapeError("proposal_network: batch-norm channel mismatch");
    for (std::size_t h = 0; h < mid.shape[0]; ++h)
        for (std::size_t c = 0; c < mid.shape[1]; ++c)
            for (std::size_t r = 0; r < mid.shape[2]; ++r)
                for (std::size_t t = 0; t < mid.shape[3]; ++t)
                    mid(h, c, r, t) = w.bn.apply(c, gelu(mid(h, c, r, t)));

    Tensor raw = detail::transpose_conv_roi(mid, w.ct2, "proposal_network ct2");

    // reorder (H,C,R,T) -> (H,R,C,T)
    Tensor out({raw.shape[0], raw.shape[2], raw.shape[1], raw.shape[3]});
    for (std::size_t h = 0; h < raw.shape[0]; ++h)
        for (std::size_t c = 0; c < raw.shape[1]; ++c)
            for (std::size_t r = 0; r < raw.shape[2]; ++r)
                for (std::size_t t = 0; t < raw.shape[3]; ++t)
                    out(h, r, c, t) = raw(h, c, r, t);
    return out;
}

// ---------------------------------------------------------------------------
// BiLSTM scorer

struct LstmDirWeights {
    std::size_t input = 0, hidden = 0;
    // gate order (i, f, g, o), each block of `hidden` rows
    std::vector<double> w_ih;  // [4*hidden][input]
    std::vector<double> w_hh;  // [4*hidden][hidden]
    std::vector<double> b_ih;  // [4*hidden]
    std::vector<double> b_hh;  // [4*hidden]
};

struct BiLstmWeights {
    LstmDirWeights fw, bw;
    std::vector<double> proj_weight;  // [outputs][2*hidden], forward half first
    std::vector<double> proj_bias;    // [outputs]
};

namespace detail {

// One directional pass; emits the hidden state per step in input order.
inline std::vector<std::vector<double>> lstm_pass(const Tensor& seq,
                                                  const LstmDirWeights& w, bool reverse) {
    const std::size_t t_len = seq.shape[1];
    const std::size_t h_len = w.hidden;
    std::vector<double> h(h_len, 0.0), c(h_len, 0.0), pre(4 * h_len);
    std::vector<std::vector<double>> states(t_len);
    for (std::size_t step = 0; step < t_len; ++step) {
        const std::size_t t = reverse ? t_len - 1 - step : step;
        for (std::size_t g = 0; g < 4 * h_len; ++g) {
            double acc = w.b_ih[g] + w.b_hh[g];
            const double* wx = w.w_ih.data() + g * w.input;
            for (std::size_t i = 0; i < w.input; ++i) acc += wx[i] * seq(i, t);
            const double* wh = w.w_hh.data() + g * h_len;
            for (std::size_t i = 0; i < h_len; ++i) acc += wh[i] * h[i];
            pre[g] = acc;
        }
        for (std::size_t i = 0; i < h_len; ++i) {
            const double gi = sigmoid(pre[i]);
            const double gf = sigmoid(pre[h_len + i]);
            const double gg = std::tanh(pre[2 * h_len + i]);
            const double go = sigmoid(pre[3 * h_len + i]);
            c[i] = gf * c[i] + gi * gg;
            h[i] = go * std::tanh(c[i]);
        }
        states[t] = h;
    }
    return states;
}

} // namespace detail

// Bidirectional pass over one ROI sequence (C,T); hidden states are
// concatenated (forward, backward) and projected to `outputs` sigmoid scores
// per step. Returns (outputs, T) with every value strictly inside (0,1).
inline Tensor bilstm_scores(const Tensor& roi_seq, const BiLstmWeights& w) {
    if (roi_seq.rank() != 2) throw ShapeError("bilstm: input must be (C,T)");
    if (roi_seq.shape[0] != w.fw.input || roi_seq.shape[0] != w.bw.input)
        throw ShapeError("bilstm: input channels do not match weights");
    const std::size_t t_len = roi_seq.shape[1];
    const std::size_t h_len = w.fw.hidden;
    const std::size_t outputs = w.proj_bias.size();

    const auto fw = detail::lstm_pass(roi_seq, w.fw, false);
    const auto bw = detail::lstm_pass(roi_seq, w.bw, true);

    Tensor out({outputs, t_len});
    for (std::size_t n = 0; n < outputs; ++n) {
        const double* pw = w.proj_weight.data() + n * 2 * h_len;
        for (std::size_t t = 0; t < t_len; ++t) {
            double acc = w.proj_bias[n];
            for (std::size_t i = 0; i < h_len; ++i) acc += pw[i] * fw[t][i];
            for (std::size_t i = 0; i < h_len; ++i) acc += pw[h_len + i] * bw[t][i];
            out(n, t) = sigmoid(acc);
        }
    }
    return out;
}

// Single-output convenience form: per-time activity score in (0,1).
inline std::vector<double> bilstm_forward(const Tensor& roi_seq, const BiLstmWeights& w) {
    Tensor scores = bilstm_scores(roi_seq, w);
    if (scores.shape[0] != 1)
        throw ShapeError("bilstm_forward: weights project to " +
                         std::to_string(scores.shape[0]) + " outputs, expected 1");
    return scores.data;
}

// ---------------------------------------------------------------------------
// Weighted mask and gating

// Convex combination of the (H,R,T) scores per time step. With
// joint_weighting the logits are softmax-normalised over H*R jointly;
// otherwise per head over R, and heads are averaged uniformly.
inline std::vector<double> weighted_mask(const Tensor& scores,
                                         std::span<const double> head_weight_logits,
                                         bool joint_weighting = true) {
    if (scores.rank() != 3) throw ShapeError("weighted_mask: scores must be (H,R,T)");
    const std::size_t heads = scores.shape[0];
    const std::size_t rois = scores.shape[1];
    const std::size_t t_len = scores.shape[2];
    if (head_weight_logits.size() != heads * rois)
        throw ShapeError("weighted_mask: expected " + std::to_string(heads * rois) +
                         " weights, got " + std::to_string(head_weight_logits.size()));

    std::vector<double> weights(head_weight_logits.begin(), head_weight_logits.end());
    auto softmax_range = [&](std::size_t begin, std::size_t end) {
        double peak = weights[begin];
        for (std::size_t i = begin; i < end; ++i) peak = std::max(peak, weights[i]);
        double sum = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            weights[i] = std::exp(weights[i] - peak);
            sum += weights[i];
        }
        for (std::size_t i = begin; i < end; ++i) weights[i] /= sum;
    };
    if (joint_weighting) {
        softmax_range(0, weights.size());
    } else {
        for (std::size_t h = 0; h < heads; ++h) softmax_range(h * rois, (h + 1) * rois);
        for (double& w : weights) w /= static_cast<double>(heads);
    }

    std::vector<double> mask(t_len, 0.0);
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t r = 0; r < rois; ++r) {
            const double w = weights[h * rois + r];
            for (std::size_t t = 0; t < t_len; ++t) mask[t] += w * scores(h, r, t);
        }
    return mask;
}

// Elementwise soft gate: the mask multiplies every class row, so gating can
// only reduce the per-frame probabilities.
inline FrameTrace gate(const FrameTrace& posteriors, std::span<const double> mask) {
    if (mask.size() != posteriors.frames())
        throw ShapeError("gate: mask length " + std::to_string(mask.size()) +
                         " does not match trace frames " +
                         std::to_string(posteriors.frames()));
    for (double m : mask)
        if (!(m >= 0.0 && m <= 1.0)) throw InvalidParameter("gate: mask values must lie in [0,1]");
    FrameTrace out = posteriors;
    for (auto& row : out.probs)
        for (std::size_t t = 0; t < row.size(); ++t) row[t] *= mask[t];
    return out;
}

// ---------------------------------------------------------------------------
// Full forward pass

struct BpnConfig {
    std::size_t heads = 3;
    std::size_t in_channels = 128;    // backbone feature-map channels
    std::size_t proj_channels = 128;  // projection-head output channels
    std::size_t roi_channels = 64;    // C_bpn
    int roi_kernel1 = 4;              // unit ROI axis grows to k1 + k2 - 1
    int roi_kernel2 = 5;
    int pool_kernel = 3;
    std::size_t lstm_hidden = 32;
    std::size_t mask_outputs = 1;  // >1 produces one mask per class
    bool joint_head_weighting = true;

    std::size_t rois() const {
        return static_cast<std::size_t>(roi_kernel1 + roi_kernel2 - 1);
    }

    void validate() const {
        if (heads < 1) throw InvalidParameter("bpn config: heads must be >= 1");
        if (in_channels < 1 || proj_channels < 1 || roi_channels < 1 || lstm_hidden < 1 ||
            mask_outputs < 1)
            throw InvalidParameter("bpn config: sizes must be positive");
        if (roi_kernel1 < 1 || roi_kernel2 < 1)
            throw InvalidParameter("bpn config: roi kernels must be >= 1");
        if (pool_kernel < 1 || pool_kernel % 2 == 0)
            throw InvalidParameter("bpn config: pool kernel must be odd");
    }
};

struct BpnWeights {
    std::vector<ProjectionHeadWeights> heads;
    ProposalWeights proposal;
    BiLstmWeights lstm;
    std::vector<double> head_weight_logits;  // [heads * rois]
};

namespace detail {

inline std::vector<double> uniform_vec(std::mt19937_64& rng, std::size_t n, double scale) {
    std::uniform_real_distribution<double> dist(-scale, scale);
    std::vector<double> v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

inline BatchNorm random_bn(std::mt19937_64& rng, std::size_t channels) {
    std::uniform_real_distribution<double> g(0.8, 1.2), b(-0.1, 0.1), m(-0.1, 0.1),
        v(0.5, 1.5);
    BatchNorm bn;
    bn.gamma.resize(channels);
    bn.beta.resize(channels);
    bn.mean.resize(channels);
    bn.var.resize(channels);
    for (std::size_t c = 0; c < channels; ++c) {
        bn.gamma[c] = g(rng);
        bn.beta[c] = b(rng);
        bn.mean[c] = m(rng);
        bn.var[c] = v(rng);
    }
    return bn;
}

} // namespace detail

inline BpnWeights random_weights(const BpnConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    BpnWeights w;

    const double conv_scale = 1.0 / std::sqrt(static_cast<double>(config.in_channels));
    for (std::size_t h = 0; h < config.heads; ++h) {
        ProjectionHeadWeights head;
        head.conv.in_channels = config.in_channels;
        head.conv.out_channels = config.proj_channels;
        head.conv.weight =
            detail::uniform_vec(rng, config.proj_channels * config.in_channels, conv_scale);
        head.conv.bias = detail::uniform_vec(rng, config.proj_channels, 0.1);
        head.bn = detail::random_bn(rng, config.proj_channels);
        w.heads.push_back(std::move(head));
    }

    const double ct1_scale = 1.0 / std::sqrt(static_cast<double>(config.proj_channels));
    w.proposal.ct1 = {config.proj_channels, config.proj_channels, config.roi_kernel1,
                      detail::uniform_vec(rng,
                                          config.proj_channels * config.proj_channels *
                                              static_cast<std::size_t>(config.roi_kernel1),
                                          ct1_scale),
                      detail::uniform_vec(rng, config.proj_channels, 0.1)};
    w.proposal.bn = detail::random_bn(rng, config.proj_channels);
    w.proposal.ct2 = {config.proj_channels, config.roi_channels, config.roi_kernel2,
                      detail::uniform_vec(rng,
                                          config.roi_channels * config.proj_channels *
                                              static_cast<std::size_t>(config.roi_kernel2),
                                          ct1_scale),
                      detail::uniform_vec(rng, config.roi_channels, 0.1)};

    const double lstm_scale = 1.0 / std::sqrt(static_cast<double>(config.lstm_hidden));
    auto random_dir = [&] {
        LstmDirWeights dir;
        dir.input = config.roi_channels;
        dir.hidden = config.lstm_hidden;
        dir.w_ih = detail::uniform_vec(rng, 4 * dir.hidden * dir.input, lstm_scale);
        dir.w_hh = detail::uniform_vec(rng, 4 * dir.hidden * dir.hidden, lstm_scale);
        dir.b_ih = detail::uniform_vec(rng, 4 * dir.hidden, 0.1);
        dir.b_hh = detail::uniform_vec(rng, 4 * dir.hidden, 0.1);
        return dir;
    };
    w.lstm.fw = random_dir();
    w.lstm.bw = random_dir();
    w.lstm.proj_weight =
        detail::uniform_vec(rng, config.mask_outputs * 2 * config.lstm_hidden, lstm_scale);
    w.lstm.proj_bias = detail::uniform_vec(rng, config.mask_outputs, 0.5);
    w.head_weight_logits = detail::uniform_vec(rng, config.heads * config.rois(), 1.0);
    return w;
}

// Checks every weight tensor against the configuration, naming the offender.
inline void validate_weights(const BpnConfig& config, const BpnWeights& w) {
    config.validate();
    auto expect = [](bool ok, const std::string& name) {
        if (!ok) throw ShapeError("weight tensor '" + name + "' has the wrong shape");
    };
    expect(w.heads.size() == config.heads, "heads");
    for (std::size_t h = 0; h < w.heads.size(); ++h) {
        const std::string p = "head" + std::to_string(h);
        const auto& head = w.heads[h];
        expect(head.conv.in_channels == config.in_channels &&
                   head.conv.out_channels == config.proj_channels,
               p + ".conv");
        expect(head.conv.weight.size() == config.proj_channels * config.in_channels,
               p + ".conv.w");
        expect(head.conv.bias.size() == config.proj_channels, p + ".conv.b");
        expect(head.bn.channels() == config.proj_channels &&
                   head.bn.beta.size() == config.proj_channels &&
                   head.bn.mean.size() == config.proj_channels &&
                   head.bn.var.size() == config.proj_channels,
               p + ".bn");
    }
    expect(w.proposal.ct1.in_channels == config.proj_channels &&
               w.proposal.ct1.out_channels == config.proj_channels &&
               w.proposal.ct1.kernel == config.roi_kernel1,
           "proposal.ct1");
    expect(w.proposal.ct1.weight.size() ==
               config.proj_channels * config.proj_channels *
                   static_cast<std::size_t>(config.roi_kernel1),
           "proposal.ct1.w");
    expect(w.proposal.ct1.bias.size() == config.proj_channels, "proposal.ct1.b");
    expect(w.proposal.bn.channels() == config.proj_channels, "proposal.bn");
    expect(w.proposal.ct2.in_channels == config.proj_channels &&
               w.proposal.ct2.out_channels == config.roi_channels &&
               w.proposal.ct2.kernel == config.roi_kernel2,
           "proposal.ct2");
    expect(w.proposal.ct2.weight.size() ==
               config.roi_channels * config.proj_channels *
                   static_cast<std::size_t>(config.roi_kernel2),
           "proposal.ct2.w");
    expect(w.proposal.ct2.bias.size() == config.roi_channels, "proposal.ct2.b");
    for (const auto* dir : {&w.lstm.fw, &w.lstm.bw}) {
        const std::string p = dir == &w.lstm.fw ? "lstm.fw" : "lstm.bw";
        expect(dir->input == config.roi_channels && dir->hidden == config.lstm_hidden, p);
        expect(dir->w_ih.size() == 4 * config.lstm_hidden * config.roi_channels, p + ".w_ih");
        expect(dir->w_hh.size() == 4 * config.lstm_hidden * config.lstm_hidden, p + ".w_hh");
        expect(dir->b_ih.size() == 4 * config.lstm_hidden, p + ".b_ih");
        expect(dir->b_hh.size() == 4 * config.lstm_hidden, p + ".b_hh");
    }
    expect(w.lstm.proj_weight.size() == config.mask_outputs * 2 * config.lstm_hidden,
           "lstm.proj.w");
    expect(w.lstm.proj_bias.size() == config.mask_outputs, "lstm.proj.b");
    expect(w.head_weight_logits.size() == config.heads * config.rois(), "head_weights");
}

// Full gating pass: projection heads -> stack along H (frequency axis reduced
// by mean) -> proposal network -> BiLSTM score per (head, ROI) -> weighted
// mask -> gate over the backbone posteriors.
inline FrameTrace bpn_forward(const std::vector<Tensor>& fmaps, const FrameTrace& posteriors,
                              const BpnConfig& config, const BpnWeights& weights) {
    validate_weights(config, weights);
    if (fmaps.size() != config.heads)
        throw ShapeError("bpn_forward: got " + std::to_string(fmaps.size()) +
                         " feature maps for " + std::to_string(config.heads) + " heads");
    const std::size_t t_len = posteriors.frames();
    if (config.mask_outputs != 1 && config.mask_outputs != posteriors.classes.size())
        throw ShapeError("bpn_forward: mask outputs must be 1 or the class count");

    Tensor stacked({config.heads, config.proj_channels, t_len});
    for (std::size_t h = 0; h < config.heads; ++h) {
        if (fmaps[h].rank() != 3 || fmaps[h].shape[1] != t_len)
            throw ShapeError("bpn_forward: feature map " + std::to_string(h) +
                             " must be (C,T,F) with T matching the trace");
        Tensor projected = projection_head(fmaps[h], weights.heads[h], config.pool_kernel);
        const std::size_t f_len = projected.shape[2];
        for (std::size_t c = 0; c < config.proj_channels; ++c)
            for (std::size_t t = 0; t < t_len; ++t) {
                double sum = 0.0;
                for (std::size_t f = 0; f < f_len; ++f) sum += projected(c, t, f);
                stacked(h, c, t) = sum / static_cast<double>(f_len);
            }
    }

    Tensor proposals = proposal_network(stacked, weights.proposal);  // (H,R,C,T)
    const std::size_t rois = proposals.shape[1];

    Tensor scores({config.heads, rois, config.mask_outputs, t_len});
    Tensor roi_seq({config.roi_channels, t_len});
    for (std::size_t h = 0; h < config.heads; ++h)
        for (std::size_t r = 0; r < rois; ++r) {
            for (std::size_t c = 0; c < config.roi_channels; ++c)
                for (std::size_t t = 0; t < t_len; ++t) roi_seq(c, t) = proposals(h, r, c, t);
            Tensor s = bilstm_scores(roi_seq, weights.lstm);
            for (std::size_t n = 0; n < config.mask_outputs; ++n)
                for (std::size_t t = 0; t < t_len; ++t) scores(h, r, n, t) = s(n, t);
        }

    FrameTrace gated = posteriors;
    Tensor slice({config.heads, rois, t_len});
    for (std::size_t n = 0; n < config.mask_outputs; ++n) {
        for (std::size_t h = 0; h < config.heads; ++h)
            for (std::size_t r = 0; r < rois; ++r)
                for (std::size_t t = 0; t < t_len; ++t) slice(h, r, t) = scores(h, r, n, t);
        const std::vector<double> mask =
            weighted_mask(slice, weights.head_weight_logits, config.joint_head_weighting);
        if (config.mask_outputs == 1) {
            gated = gate(gated, mask);
        } else {
            for (std::size_t t = 0; t < t_len; ++t) gated.probs[n][t] *= mask[t];
        }
    }
    return gated;
}

// ---------------------------------------------------------------------------
// Focal loss with analytic derivative

struct FocalParams {
    double alpha = 0.25;  // in (0,1]
    double gamma = 2.0;   // >= 0

    void validate() const {
        if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidParameter("focal alpha must be in (0,1]");
        if (!(gamma >= 0.0)) throw InvalidParameter("focal gamma must be >= 0");
    }
};

struct FocalResult {
    double loss = 0.0;
    double dloss_dp = 0.0;
};

// loss = -alpha * (1 - p_t)^gamma * log(p_t) with p_t = p for y=1, 1-p for
// y=0. p is clamped to [eps, 1-eps] before evaluation.
inline FocalResult focal_loss(double p, int y, const FocalParams& params = {}) {
    params.validate();
    if (y != 0 && y != 1) throw InvalidParameter("focal label must be 0 or 1");
    if (!(p >= 0.0 && p <= 1.0)) throw std::domain_error("focal probability outside [0,1]");
    constexpr double eps = 1e-7;
    p = std::clamp(p, eps, 1.0 - eps);

    const double p_t = y == 1 ? p : 1.0 - p;
    const double one_minus = 1.0 - p_t;
    const double modulator = std::pow(one_minus, params.gamma);
    FocalResult out;
    out.loss = -params.alpha * modulator * std::log(p_t);

    // d/dp_t [-a (1-p_t)^g log p_t] = a g (1-p_t)^(g-1) log p_t - a (1-p_t)^g / p_t
    double d_pt = -params.alpha * modulator / p_t;
    if (params.gamma > 0.0)
        d_pt += params.alpha * params.gamma * std::pow(one_minus, params.gamma - 1.0) *
                std::log(p_t);
    out.dloss_dp = y == 1 ? d_pt : -d_pt;
    return out;
}

// ---------------------------------------------------------------------------
// Weight manifest I/O (JSON: named tensors with shapes, validated on load)

namespace detail {

inline nlohmann::json tensor_entry(std::vector<std::size_t> shape,
                                   const std::vector<double>& data) {
    return nlohmann::json{{"shape", shape}, {"data", data}};
}

inline std::vector<double> load_tensor(const nlohmann::json& tensors, const std::string& name,
                                       std::vector<std::size_t> shape) {
    if (!tensors.contains(name))
        throw ConfigError("weight manifest is missing tensor '" + name + "'");
    const auto& entry = tensors.at(name);
    const auto got = entry.at("shape").get<std::vector<std::size_t>>();
    if (got != shape) {
        auto fmt = [](const std::vector<std::size_t>& dims) {
            std::string s = "(";
            for (std::size_t i = 0; i < dims.size(); ++i)
                s += (i ? "," : "") + std::to_string(dims[i]);
            return s + ")";
        };
        throw ShapeError("weight tensor '" + name + "': manifest shape " + fmt(got) +
                         " does not match configured shape " + fmt(shape));
    }
    auto data = entry.at("data").get<std::vector<double>>();
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    if (data.size() != n)
        throw ShapeError("weight tensor '" + name + "': data length does not match shape");
    return data;
}

} // namespace detail

inline nlohmann::json weights_to_json(const BpnConfig& config, const BpnWeights& w) {
    validate_weights(config, w);
    nlohmann::json tensors;
    for (std::size_t h = 0; h < w.heads.size(); ++h) {
        const std::string p = "head" + std::to_string(h);
        const auto& head = w.heads[h];
        tensors[p + ".conv.w"] = detail::tensor_entry(
            {config.proj_channels, config.in_channels}, head.conv.weight);
        tensors[p + ".conv.b"] = detail::tensor_entry({config.proj_channels}, head.conv.bias);
        tensors[p + ".bn.gamma"] = detail::tensor_entry({config.proj_channels}, head.bn.gamma);
        tensors[p + ".bn.beta"] = detail::tensor_entry({config.proj_channels}, head.bn.beta);
        tensors[p + ".bn.mean"] = detail::tensor_entry({config.proj_channels}, head.bn.mean);
        tensors[p + ".bn.var"] = detail::tensor_entry({config.proj_channels}, head.bn.var);
    }
    tensors["proposal.ct1.w"] = detail::tensor_entry(
        {config.proj_channels, config.proj_channels, static_cast<std::size_t>(config.roi_kernel1)},
        w.proposal.ct1.weight);
    tensors["proposal.ct1.b"] =
        detail::tensor_entry({config.proj_channels}, w.proposal.ct1.bias);
    tensors["proposal.bn.gamma"] =
        detail::tensor_entry({config.proj_channels}, w.proposal.bn.gamma);
    tensors["proposal.bn.beta"] =
        detail::tensor_entry({config.proj_channels}, w.proposal.bn.beta);
    tensors["proposal.bn.mean"] =
        detail::tensor_entry({config.proj_channels}, w.proposal.bn.mean);
    tensors["proposal.bn.var"] =
        detail::tensor_entry({config.proj_channels}, w.proposal.bn.var);
    tensors["proposal.ct2.w"] = detail::tensor_entry(
        {config.roi_channels, config.proj_channels, static_cast<std::size_t>(config.roi_kernel2)},
        w.proposal.ct2.weight);
    tensors["proposal.ct2.b"] =
        detail::tensor_entry({config.roi_channels}, w.proposal.ct2.bias);
    for (const auto* dir : {&w.lstm.fw, &w.lstm.bw}) {
        const std::string p = dir == &w.lstm.fw ? "lstm.fw" : "lstm.bw";
        tensors[p + ".w_ih"] = detail::tensor_entry(
            {4 * config.lstm_hidden, config.roi_channels}, dir->w_ih);
        tensors[p + ".w_hh"] = detail::tensor_entry(
            {4 * config.lstm_hidden, config.lstm_hidden}, dir->w_hh);
        tensors[p + ".b_ih"] = detail::tensor_entry({4 * config.lstm_hidden}, dir->b_ih);
        tensors[p + ".b_hh"] = detail::tensor_entry({4 * config.lstm_hidden}, dir->b_hh);
    }
    tensors["lstm.proj.w"] = detail::tensor_entry(
        {config.mask_outputs, 2 * config.lstm_hidden}, w.lstm.proj_weight);
    tensors["lstm.proj.b"] = detail::tensor_entry({config.mask_outputs}, w.lstm.proj_bias);
    tensors["head_weights"] =
        detail::tensor_entry({config.heads * config.rois()}, w.head_weight_logits);
    return nlohmann::json{{"schema", "1"}, {"tensors", tensors}};
}

inline BpnWeights weights_from_json(const nlohmann::json& manifest, const BpnConfig& config) {
    config.validate();
    if (!manifest.contains("tensors"))
        throw ConfigError("weight manifest has no 'tensors' object");
    const auto& tensors = manifest.at("tensors");

    BpnWeights w;
    for (std::size_t h = 0; h < config.heads; ++h) {
        const std::string p = "head" + std::to_string(h);
        ProjectionHeadWeights head;
        head.conv.in_channels = config.in_channels;
        head.conv.out_channels = config.proj_channels;
        head.conv.weight = detail::load_tensor(tensors, p + ".conv.w",
                                               {config.proj_channels, config.in_channels});
        head.conv.bias = detail::load_tensor(tensors, p + ".conv.b", {config.proj_channels});
        head.bn.gamma = detail::load_tensor(tensors, p + ".bn.gamma", {config.proj_channels});
        head.bn.beta = detail::load_tensor(tensors, p + ".bn.beta", {config.proj_channels});
        head.bn.mean = detail::load_tensor(tensors, p + ".bn.mean", {config.proj_channels});
        head.bn.var = detail::load_tensor(tensors, p + ".bn.var", {config.proj_channels});
        w.heads.push_back(std::move(head));
    }
    w.proposal.ct1 = {config.proj_channels, config.proj_channels, config.roi_kernel1,
                      detail::load_tensor(tensors, "proposal.ct1.w",
                                          {config.proj_channels, config.proj_channels,
                                           static_cast<std::size_t>(config.roi_kernel1)}),
                      detail::load_tensor(tensors, "proposal.ct1.b", {config.proj_channels})};
    w.proposal.bn.gamma =
        detail::load_tensor(tensors, "proposal.bn.gamma", {config.proj_channels});
    w.proposal.bn.beta =
        detail::load_tensor(tensors, "proposal.bn.beta", {config.proj_channels});
    w.proposal.bn.mean =
        detail::load_tensor(tensors, "proposal.bn.mean", {config.proj_channels});
    w.proposal.bn.var = detail::load_tensor(tensors, "proposal.bn.var", {config.proj_channels});
    w.proposal.ct2 = {config.proj_channels, config.roi_channels, config.roi_kernel2,
                      detail::load_tensor(tensors, "proposal.ct2.w",
                                          {config.roi_channels, config.proj_channels,
                                           static_cast<std::size_t>(config.roi_kernel2)}),
                      detail::load_tensor(tensors, "proposal.ct2.b", {config.roi_channels})};
    for (auto* dir : {&w.lstm.fw, &w.lstm.bw}) {
        const std::string p = dir == &w.lstm.fw ? "lstm.fw" : "lstm.bw";
        dir->input = config.roi_channels;
        dir->hidden = config.lstm_hidden;
        dir->w_ih = detail::load_tensor(tensors, p + ".w_ih",
                                        {4 * config.lstm_hidden, config.roi_channels});
        dir->w_hh = detail::load_tensor(tensors, p + ".w_hh",
                                        {4 * config.lstm_hidden, config.lstm_hidden});
        dir->b_ih = detail::load_tensor(tensors, p + ".b_ih", {4 * config.lstm_hidden});
        dir->b_hh = detail::load_tensor(tensors, p + ".b_hh", {4 * config.lstm_hidden});
    }
    w.lstm.proj_weight = detail::load_tensor(tensors, "lstm.proj.w",
                                             {config.mask_outputs, 2 * config.lstm_hidden});
    w.lstm.proj_bias = detail::load_tensor(tensors, "lstm.proj.b", {config.mask_outputs});
    w.head_weight_logits =
        detail::load_tensor(tensors, "head_weights", {config.heads * config.rois()});
    validate_weights(config, w);
    return w;
}

// Seeded stand-in for backbone intermediate feature maps: uniform noise with
// shape (channels, frames, freq_bins).
inline Tensor random_feature_map(std::size_t channels, std::size_t frames,
                                 std::size_t freq_bins, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Tensor t({channels, frames, freq_bins});
    for (double& x : t.data) x = dist(rng);
    return t;
}

} // namespace sedpost::bpn
