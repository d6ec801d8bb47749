#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "hamm/nn.hpp"
#include "hamm/tensor.hpp"

namespace hamm {

enum Modality : int { kFundus = 0, kOct = 1, kVf = 2 };
inline constexpr int kNumModalities = 3;
inline constexpr int kNumRelations = kNumModalities * (kNumModalities - 1);

const char* modality_name(int m);

/// Index of the relation type for a directed edge receiver <- sender between
/// two distinct modalities; one type per ordered pair.
int relation_index(int receiver, int sender);

namespace mcga {

enum class Pooling { kFull, kGapOnly };
enum class Attention { kFull, kGatingOnly, kGraphOnly };

using Vec = std::vector<double>;

/// GAP ‖ GMP ‖ GeM over each channel of a C×(h·w) map, or GAP alone.
/// GeM clamps inputs at `eps`. Rejects non-finite input.
Vec summarize(std::span<const double> map, int channels, int spatial, double gem_p, double eps,
              Pooling pooling = Pooling::kFull);

/// sigmoid(A·c + b); A is [C, len(c)].
Vec embed(const Tensor& weight, const Tensor& bias, std::span<const double> summary);

/// v ⊙ mean_h(gate_h). Rejects an empty gate list.
Vec gate(std::span<const double> v, std::span<const Vec> gate_outputs);

struct GraphParams {
  const Tensor* projection;  // [H, C, C]
  const Tensor* attention;   // [H, 2C]
  const Tensor* relations;   // [H, kNumRelations, C]
  double leaky_slope = 0.01;
};

struct GraphResult {
  std::vector<Vec> updated;  // one per node
  /// alpha[h][i][j]: weight node i gives neighbour j (0 on the diagonal).
  std::vector<std::vector<Vec>> alpha;
  /// LeakyReLU compatibility scores and their pre-activations, same layout.
  std::vector<std::vector<Vec>> scores;
  std::vector<std::vector<Vec>> preactivation;
};

/// Relational graph attention over fully connected nodes without self-loops.
/// `nodes[i]` is the gated embedding of modality `modalities[i]`; at least two
/// nodes are required.
GraphResult graph_attend(std::span<const Vec> nodes, std::span<const int> modalities, const GraphParams& params);

/// Softmax over a score vector.
Vec softmax(std::span<const double> scores);

/// sigmoid(F·u + b), the same layer for every modality row.
Vec finalize_weights(const Tensor& weight, const Tensor& bias, std::span<const double> u);

/// E[n,c,y,x] = E'[n,c,y,x] * w[n][c].
Tensor apply(const Tensor& features, std::span<const Vec> weights);

}  // namespace mcga

struct McgaConfig {
  int channels = 16;
  int heads = 4;
  double gem_p_init = 3.0;
  double gem_eps = 1e-6;
  double leaky_slope = 0.01;
  mcga::Pooling pooling = mcga::Pooling::kFull;
  mcga::Attention attention = mcga::Attention::kFull;
};

/// Multimodal-channel graph attention: per-modality pooled summaries drive a
/// gated, relation-aware attention over the modality graph that produces one
/// channel weight vector per modality.
class Mcga {
 public:
  Mcga() = default;
  Mcga(const McgaConfig& config, Rng& rng);

  /// `features[i]` is the [N,C,h,w] map of modality `modalities[i]`. Returns the
  /// re-weighted maps in the same order. With a single modality the graph step
  /// is skipped and the gated embedding feeds the final layer directly.
  std::vector<Tensor> forward(std::span<const int> modalities, std::span<const Tensor> features);
  std::vector<Tensor> backward(std::span<const Tensor> grad_out);

  /// Channel weights of the last forward call: [sample][node] -> C values.
  const std::vector<std::vector<mcga::Vec>>& last_weights() const { return weights_; }

  void collect(const std::string& prefix, ParamList& out);
  const McgaConfig& config() const { return config_; }

  Parameter gem_p;       // [1]
  Parameter embed_w;     // [C, 3C] (or [C, C] for GAP-only pooling)
  Parameter embed_b;     // [C]
  Parameter gate_w;      // [H, C, C]
  Parameter gate_b;      // [H, C]
  Parameter projection;  // [H, C, C]
  Parameter attention;   // [H, 2C]
  Parameter relations;   // [H, 6, C]
  Parameter final_w;     // [C, C]
  Parameter final_b;     // [C]

 private:
  struct NodeCache {
    mcga::Vec summary, v, gbar, vhat, u, w;
    std::vector<mcga::Vec> gates;   // per head
    std::vector<int> argmax;        // per channel
    mcga::Vec gem_mean;             // per channel mean of clamp(x)^p
  };
  struct SampleCache {
    std::vector<NodeCache> nodes;
    mcga::GraphResult graph;
    std::vector<std::vector<mcga::Vec>> projected;  // [h][node]
    bool graph_used = false;
  };

  bool gating_enabled() const { return config_.attention != mcga::Attention::kGraphOnly; }
  bool graph_enabled() const { return config_.attention != mcga::Attention::kGatingOnly; }
  int summary_length() const;

  McgaConfig config_;
  std::vector<int> modalities_;
  std::vector<Tensor> inputs_;
  std::vector<SampleCache> cache_;
  std::vector<std::vector<mcga::Vec>> weights_;
};

}  // namespace hamm
