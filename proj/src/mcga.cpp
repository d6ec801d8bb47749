#include "hamm/mcga.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "hamm/errors.hpp"

namespace hamm {

const char* modality_name(int m) {
  switch (m) {
    case kFundus: return "fundus";
    case kOct: return "oct";
    case kVf: return "vf";
  }
  throw std::invalid_argument("unknown modality " + std::to_string(m));
}

int relation_index(int receiver, int sender) {
  if (receiver == sender || receiver < 0 || sender < 0 || receiver >= kNumModalities || sender >= kNumModalities)
    throw std::invalid_argument("relation_index: need two distinct modalities");
  return receiver * (kNumModalities - 1) + (sender < receiver ? sender : sender - 1);
}

namespace mcga {
namespace {

struct PoolDetail {
  Vec summary;
  std::vector<int> argmax;
  Vec gem_mean;
};

PoolDetail summarize_detail(std::span<const double> map, int channels, int spatial, double p, double eps,
                            Pooling pooling) {
  if (channels < 1 || spatial < 1 || map.size() != static_cast<std::size_t>(channels) * spatial)
    throw std::invalid_argument("summarize: map size does not match channels x spatial");
  PoolDetail d;
  const bool full = pooling == Pooling::kFull;
  d.summary.assign(static_cast<std::size_t>(full ? 3 : 1) * channels, 0.0);
  d.argmax.assign(channels, 0);
  d.gem_mean.assign(channels, 0.0);
  for (int c = 0; c < channels; ++c) {
    const double* x = map.data() + static_cast<std::size_t>(c) * spatial;
    double sum = 0.0, best = x[0], pow_sum = 0.0;
    int arg = 0;
    for (int i = 0; i < spatial; ++i) {
      if (!std::isfinite(x[i])) throw NumericError("summarize: non-finite feature value");
      sum += x[i];
      if (x[i] > best) {
        best = x[i];
        arg = i;
      }
      if (full) pow_sum += std::pow(std::max(x[i], eps), p);
    }
    d.summary[c] = sum / spatial;
    d.argmax[c] = arg;
    if (full) {
      d.summary[channels + c] = best;
      d.gem_mean[c] = pow_sum / spatial;
      d.summary[2 * channels + c] = std::pow(d.gem_mean[c], 1.0 / p);
    }
  }
  return d;
}

Vec matvec(const double* m, int rows, int cols, std::span<const double> x) {
  Vec y(rows, 0.0);
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int c = 0; c < cols; ++c) acc += m[static_cast<std::size_t>(r) * cols + c] * x[c];
    y[r] = acc;
  }
  return y;
}

// y += mᵀ·g
void matvec_t_acc(const double* m, int rows, int cols, std::span<const double> g, Vec& y) {
  for (int r = 0; r < rows; ++r) {
    if (g[r] == 0.0) continue;
    for (int c = 0; c < cols; ++c) y[c] += m[static_cast<std::size_t>(r) * cols + c] * g[r];
  }
}

// grad += g ⊗ x
void outer_acc(double* grad, std::span<const double> g, std::span<const double> x) {
  for (std::size_t r = 0; r < g.size(); ++r) {
    if (g[r] == 0.0) continue;
    for (std::size_t c = 0; c < x.size(); ++c) grad[r * x.size() + c] += g[r] * x[c];
  }
}

double dot(const double* a, const double* b, int n) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

Vec summarize(std::span<const double> map, int channels, int spatial, double gem_p, double eps, Pooling pooling) {
  return summarize_detail(map, channels, spatial, gem_p, eps, pooling).summary;
}

Vec embed(const Tensor& weight, const Tensor& bias, std::span<const double> summary) {
  if (weight.rank() != 2 || weight.dim(1) != static_cast<int>(summary.size()) || bias.size() != weight.dim(0) * 1ul)
    throw std::invalid_argument("embed: weight " + to_string(weight.shape()) + " does not accept summary of length " +
                                std::to_string(summary.size()));
  Vec v = matvec(weight.data(), weight.dim(0), weight.dim(1), summary);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = sigmoid(v[i] + bias[i]);
  return v;
}

Vec gate(std::span<const double> v, std::span<const Vec> gate_outputs) {
  if (gate_outputs.empty()) throw std::invalid_argument("gate: at least one head is required");
  Vec out(v.size(), 0.0);
  for (const Vec& g : gate_outputs) {
    if (g.size() != v.size()) throw std::invalid_argument("gate: head output length mismatch");
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += g[i];
  }
  const double inv = 1.0 / static_cast<double>(gate_outputs.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * (out[i] * inv);
  return out;
}

Vec softmax(std::span<const double> scores) {
  const double mx = *std::max_element(scores.begin(), scores.end());
  Vec p(scores.size());
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) z += (p[i] = std::exp(scores[i] - mx));
  for (double& x : p) x /= z;
  return p;
}

GraphResult graph_attend(std::span<const Vec> nodes, std::span<const int> modalities, const GraphParams& params) {
  const int m = static_cast<int>(nodes.size());
  if (m < 2 || modalities.size() != nodes.size()) throw std::invalid_argument("graph_attend: need >= 2 labelled nodes");
  const Tensor& W = *params.projection;
  const Tensor& A = *params.attention;
  const Tensor& R = *params.relations;
  const int heads = W.dim(0), C = W.dim(1);
  for (const Vec& n : nodes)
    if (static_cast<int>(n.size()) != C) throw std::invalid_argument("graph_attend: node width mismatch");
  if (A.shape() != Shape{heads, 2 * C} || R.shape() != Shape{heads, kNumRelations, C})
    throw std::invalid_argument("graph_attend: parameter shapes inconsistent");

  GraphResult out;
  out.updated.assign(m, Vec(C, 0.0));
  out.alpha.assign(heads, std::vector<Vec>(m, Vec(m, 0.0)));
  out.scores = out.alpha;
  out.preactivation = out.alpha;
  const double inv_heads = 1.0 / heads;
  for (int h = 0; h < heads; ++h) {
    std::vector<Vec> proj(m);
    for (int i = 0; i < m; ++i) proj[i] = matvec(W.data() + static_cast<std::size_t>(h) * C * C, C, C, nodes[i]);
    const double* a_self = A.data() + static_cast<std::size_t>(h) * 2 * C;
    const double* a_nbr = a_self + C;
    for (int i = 0; i < m; ++i) {
      const double self_term = dot(a_self, proj[i].data(), C);
      std::vector<int> nbrs;
      Vec e;
      std::vector<Vec> msgs;
      for (int j = 0; j < m; ++j) {
        if (j == i) continue;
        const double* r = R.data() + (static_cast<std::size_t>(h) * kNumRelations +
                                      relation_index(modalities[i], modalities[j])) * C;
        Vec msg(C);
        for (int c = 0; c < C; ++c) msg[c] = proj[j][c] + r[c];
        const double s = self_term + dot(a_nbr, msg.data(), C);
        const double score = s > 0 ? s : params.leaky_slope * s;
        if (!std::isfinite(score)) throw NumericError("graph_attend: non-finite attention score");
        out.preactivation[h][i][j] = s;
        out.scores[h][i][j] = score;
        nbrs.push_back(j);
        e.push_back(score);
        msgs.push_back(std::move(msg));
      }
      const Vec alpha = softmax(e);
      for (std::size_t k = 0; k < nbrs.size(); ++k) {
        out.alpha[h][i][nbrs[k]] = alpha[k];
        for (int c = 0; c < C; ++c) out.updated[i][c] += inv_heads * alpha[k] * msgs[k][c];
      }
    }
  }
  return out;
}

Vec finalize_weights(const Tensor& weight, const Tensor& bias, std::span<const double> u) { return embed(weight, bias, u); }

Tensor apply(const Tensor& features, std::span<const Vec> weights) {
  if (features.rank() != 4 || static_cast<int>(weights.size()) != features.dim(0))
    throw std::invalid_argument("apply: expected one weight vector per batch item");
  const int C = features.dim(1);
  const std::size_t plane = static_cast<std::size_t>(features.dim(2)) * features.dim(3);
  Tensor out(features.shape());
  for (int n = 0; n < features.dim(0); ++n) {
    if (static_cast<int>(weights[n].size()) != C) throw std::invalid_argument("apply: channel count mismatch");
    for (int c = 0; c < C; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = features[base + i] * weights[n][c];
    }
  }
  return out;
}

}  // namespace mcga

using mcga::Vec;

Mcga::Mcga(const McgaConfig& config, Rng& rng) : config_(config) {
  const int C = config.channels, H = config.heads;
  if (C < 1) throw std::invalid_argument("Mcga: channels must be positive");
  if (H < 1) throw std::invalid_argument("Mcga: head count must be at least 1");
  gem_p = Parameter({1});
  gem_p.value[0] = config.gem_p_init;
  embed_w = Parameter({C, summary_length()});
  embed_b = Parameter({C});
  gate_w = Parameter({H, C, C});
  gate_b = Parameter({H, C});
  projection = Parameter({H, C, C});
  attention = Parameter({H, 2 * C});
  relations = Parameter({H, kNumRelations, C});
  final_w = Parameter({C, C});
  final_b = Parameter({C});
  init_uniform_fan_in(embed_w.value, summary_length(), kGainDefault, rng);
  init_uniform_fan_in(embed_b.value, summary_length(), kGainDefault, rng);
  init_uniform_fan_in(gate_w.value, C, kGainDefault, rng);
  init_uniform_fan_in(gate_b.value, C, kGainDefault, rng);
  init_uniform_fan_in(projection.value, C, kGainDefault, rng);
  init_uniform_fan_in(attention.value, 2 * C, kGainDefault, rng);
  init_uniform_fan_in(final_w.value, C, kGainDefault, rng);
  init_uniform_fan_in(final_b.value, C, kGainDefault, rng);
}

int Mcga::summary_length() const {
  return config_.pooling == mcga::Pooling::kFull ? 3 * config_.channels : config_.channels;
}

void Mcga::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + ".gem_p", &gem_p});
  out.push_back({prefix + ".embed.weight", &embed_w});
  out.push_back({prefix + ".embed.bias", &embed_b});
  out.push_back({prefix + ".gate.weight", &gate_w});
  out.push_back({prefix + ".gate.bias", &gate_b});
  out.push_back({prefix + ".graph.projection", &projection});
  out.push_back({prefix + ".graph.attention", &attention});
  out.push_back({prefix + ".graph.relations", &relations});
  out.push_back({prefix + ".final.weight", &final_w});
  out.push_back({prefix + ".final.bias", &final_b});
}

std::vector<Tensor> Mcga::forward(std::span<const int> modalities, std::span<const Tensor> features) {
  const int m = static_cast<int>(features.size());
  if (m < 1 || m > kNumModalities || modalities.size() != features.size())
    throw std::invalid_argument("Mcga: expected 1-3 labelled modality maps");
  const int C = config_.channels, H = config_.heads;
  const Shape& shape = features[0].shape();
  if (shape.size() != 4 || shape[1] != C)
    throw std::invalid_argument("Mcga: expected [N," + std::to_string(C) + ",h,w], got " + to_string(shape));
  for (const Tensor& f : features)
    if (f.shape() != shape) throw std::invalid_argument("Mcga: modality maps differ in shape");

  const int N = shape[0], spatial = shape[2] * shape[3];
  const double p = gem_p.value[0];
  modalities_.assign(modalities.begin(), modalities.end());
  inputs_.assign(features.begin(), features.end());
  cache_.assign(N, {});
  weights_.assign(N, std::vector<Vec>(m));
  const mcga::GraphParams gp{&projection.value, &attention.value, &relations.value, config_.leaky_slope};

  for (int n = 0; n < N; ++n) {
    SampleCache& sc = cache_[n];
    sc.nodes.resize(m);
    std::vector<Vec> vhat(m);
    for (int a = 0; a < m; ++a) {
      NodeCache& nc = sc.nodes[a];
      std::span<const double> map(features[a].data() + static_cast<std::size_t>(n) * C * spatial,
                                  static_cast<std::size_t>(C) * spatial);
      auto detail = mcga::summarize_detail(map, C, spatial, p, config_.gem_eps, config_.pooling);
      nc.summary = std::move(detail.summary);
      nc.argmax = std::move(detail.argmax);
      nc.gem_mean = std::move(detail.gem_mean);
      nc.v = mcga::embed(embed_w.value, embed_b.value, nc.summary);
      if (gating_enabled()) {
        nc.gates.resize(H);
        for (int h = 0; h < H; ++h) {
          nc.gates[h] = mcga::matvec(gate_w.value.data() + static_cast<std::size_t>(h) * C * C, C, C, nc.v);
          for (int c = 0; c < C; ++c) nc.gates[h][c] = sigmoid(nc.gates[h][c] + gate_b.value[h * C + c]);
        }
        nc.vhat = mcga::gate(nc.v, nc.gates);
        nc.gbar.assign(C, 0.0);
        for (int c = 0; c < C; ++c) {
          for (int h = 0; h < H; ++h) nc.gbar[c] += nc.gates[h][c];
          nc.gbar[c] /= H;
        }
      } else {
        nc.vhat = nc.v;
      }
      vhat[a] = nc.vhat;
    }
    sc.graph_used = graph_enabled() && m >= 2;
    if (sc.graph_used) {
      sc.graph = mcga::graph_attend(vhat, modalities_, gp);
      sc.projected.assign(H, std::vector<Vec>(m));
      for (int h = 0; h < H; ++h)
        for (int a = 0; a < m; ++a)
          sc.projected[h][a] = mcga::matvec(projection.value.data() + static_cast<std::size_t>(h) * C * C, C, C, vhat[a]);
    }
    for (int a = 0; a < m; ++a) {
      NodeCache& nc = sc.nodes[a];
      nc.u = sc.graph_used ? sc.graph.updated[a] : nc.vhat;
      nc.w = mcga::finalize_weights(final_w.value, final_b.value, nc.u);
      weights_[n][a] = nc.w;
    }
  }

  std::vector<Tensor> out;
  out.reserve(m);
  for (int a = 0; a < m; ++a) {
    std::vector<Vec> w(N);
    for (int n = 0; n < N; ++n) w[n] = weights_[n][a];
    out.push_back(mcga::apply(features[a], w));
  }
  return out;
}

std::vector<Tensor> Mcga::backward(std::span<const Tensor> grad_out) {
  const int m = static_cast<int>(inputs_.size());
  if (static_cast<int>(grad_out.size()) != m) throw std::invalid_argument("Mcga::backward: gradient count mismatch");
  const int C = config_.channels, H = config_.heads;
  const Shape& shape = inputs_[0].shape();
  const int N = shape[0], spatial = shape[2] * shape[3];
  const int S = summary_length();
  const double p = gem_p.value[0];
  const double inv_h = 1.0 / H;

  std::vector<Tensor> grad_in;
  for (int a = 0; a < m; ++a) {
    require_same_shape(grad_out[a], inputs_[a], "Mcga::backward");
    grad_in.emplace_back(inputs_[a].shape());
  }

  for (int n = 0; n < N; ++n) {
    SampleCache& sc = cache_[n];
    std::vector<Vec> g_u(m, Vec(C, 0.0));
    // E = E' ⊙ w and w = sigmoid(F u + b)
    for (int a = 0; a < m; ++a) {
      const NodeCache& nc = sc.nodes[a];
      const std::size_t base = static_cast<std::size_t>(n) * C * spatial;
      Vec g_z(C, 0.0);
      for (int c = 0; c < C; ++c) {
        double gw = 0.0;
        for (int i = 0; i < spatial; ++i) {
          const std::size_t idx = base + static_cast<std::size_t>(c) * spatial + i;
          gw += grad_out[a][idx] * inputs_[a][idx];
          grad_in[a][idx] = grad_out[a][idx] * nc.w[c];
        }
        g_z[c] = gw * nc.w[c] * (1.0 - nc.w[c]);
        final_b.grad[c] += g_z[c];
      }
      mcga::outer_acc(final_w.grad.data(), g_z, nc.u);
      mcga::matvec_t_acc(final_w.value.data(), C, C, g_z, g_u[a]);
    }

    std::vector<Vec> g_vhat(m, Vec(C, 0.0));
    if (sc.graph_used) {
      for (int h = 0; h < H; ++h) {
        const double* Wh = projection.value.data() + static_cast<std::size_t>(h) * C * C;
        double* gWh = projection.grad.data() + static_cast<std::size_t>(h) * C * C;
        const double* a_self = attention.value.data() + static_cast<std::size_t>(h) * 2 * C;
        const double* a_nbr = a_self + C;
        double* ga_self = attention.grad.data() + static_cast<std::size_t>(h) * 2 * C;
        double* ga_nbr = ga_self + C;
        const auto& P = sc.projected[h];
        std::vector<Vec> g_P(m, Vec(C, 0.0));
        for (int i = 0; i < m; ++i) {
          std::vector<int> nbrs;
          std::vector<Vec> msgs;
          Vec g_alpha;
          for (int j = 0; j < m; ++j) {
            if (j == i) continue;
            const int r = relation_index(modalities_[i], modalities_[j]);
            const double* Rr = relations.value.data() + (static_cast<std::size_t>(h) * kNumRelations + r) * C;
            Vec msg(C);
            for (int c = 0; c < C; ++c) msg[c] = P[j][c] + Rr[c];
            g_alpha.push_back(inv_h * mcga::dot(g_u[i].data(), msg.data(), C));
            nbrs.push_back(j);
            msgs.push_back(std::move(msg));
          }
          double mean_g = 0.0;
          for (std::size_t k = 0; k < nbrs.size(); ++k) mean_g += sc.graph.alpha[h][i][nbrs[k]] * g_alpha[k];
          for (std::size_t k = 0; k < nbrs.size(); ++k) {
            const int j = nbrs[k];
            const double alpha = sc.graph.alpha[h][i][j];
            const double g_e = alpha * (g_alpha[k] - mean_g);
            const double s = sc.graph.preactivation[h][i][j];
            const double g_s = g_e * (s > 0 ? 1.0 : config_.leaky_slope);
            const int r = relation_index(modalities_[i], modalities_[j]);
            double* gRr = relations.grad.data() + (static_cast<std::size_t>(h) * kNumRelations + r) * C;
            for (int c = 0; c < C; ++c) {
              ga_self[c] += g_s * P[i][c];
              ga_nbr[c] += g_s * msgs[k][c];
              g_P[i][c] += g_s * a_self[c];
              const double g_msg = g_s * a_nbr[c] + inv_h * alpha * g_u[i][c];
              g_P[j][c] += g_msg;
              gRr[c] += g_msg;
            }
          }
        }
        for (int a = 0; a < m; ++a) {
          mcga::outer_acc(gWh, g_P[a], sc.nodes[a].vhat);
          mcga::matvec_t_acc(Wh, C, C, g_P[a], g_vhat[a]);
        }
      }
    } else {
      g_vhat = g_u;
    }

    for (int a = 0; a < m; ++a) {
      const NodeCache& nc = sc.nodes[a];
      Vec g_v(C, 0.0);
      if (gating_enabled()) {
        for (int c = 0; c < C; ++c) g_v[c] = g_vhat[a][c] * nc.gbar[c];
        for (int h = 0; h < H; ++h) {
          Vec g_zh(C);
          for (int c = 0; c < C; ++c) {
            const double y = nc.gates[h][c];
            g_zh[c] = g_vhat[a][c] * nc.v[c] * inv_h * y * (1.0 - y);
            gate_b.grad[h * C + c] += g_zh[c];
          }
          mcga::outer_acc(gate_w.grad.data() + static_cast<std::size_t>(h) * C * C, g_zh, nc.v);
          mcga::matvec_t_acc(gate_w.value.data() + static_cast<std::size_t>(h) * C * C, C, C, g_zh, g_v);
        }
      } else {
        g_v = g_vhat[a];
      }
      Vec g_z(C);
      for (int c = 0; c < C; ++c) {
        g_z[c] = g_v[c] * nc.v[c] * (1.0 - nc.v[c]);
        embed_b.grad[c] += g_z[c];
      }
      mcga::outer_acc(embed_w.grad.data(), g_z, nc.summary);
      Vec g_c(S, 0.0);
      mcga::matvec_t_acc(embed_w.value.data(), C, S, g_z, g_c);

      const std::size_t base = static_cast<std::size_t>(n) * C * spatial;
      const double* x = inputs_[a].data() + base;
      double* gx = grad_in[a].data() + base;
      for (int c = 0; c < C; ++c) {
        const double g_gap = g_c[c] / spatial;
        for (int i = 0; i < spatial; ++i) gx[c * spatial + i] += g_gap;
        if (config_.pooling != mcga::Pooling::kFull) continue;
        gx[c * spatial + nc.argmax[c]] += g_c[C + c];
        const double g_gem = g_c[2 * C + c];
        if (g_gem == 0.0) continue;
        const double s = nc.gem_mean[c];
        const double gem = nc.summary[2 * C + c];
        const double coef = g_gem * std::pow(s, 1.0 / p - 1.0) / spatial;
        double pow_log = 0.0;
        for (int i = 0; i < spatial; ++i) {
          const double xi = x[c * spatial + i];
          const double q = std::max(xi, config_.gem_eps);
          const double qp = std::pow(q, p);
          pow_log += qp * std::log(q);
          if (xi > config_.gem_eps) gx[c * spatial + i] += coef * qp / q;
        }
        pow_log /= spatial;
        gem_p.grad[0] += g_gem * gem * (-std::log(s) / (p * p) + pow_log / (p * s));
      }
    }
  }
  return grad_in;
}

}  // namespace hamm
