#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "polyroute/config_space.hpp"
#include "polyroute/embedding.hpp"
#include "polyroute/tensor.hpp"

namespace polyroute::selector {

enum class Activation { Relu, Sigmoid };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

/// One ND convolution over the configuration grid: kernel extent 3 with
/// zero padding on every grid axis, so the spatial shape is preserved and
/// only the channel count changes.
struct ConvLayer {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    Tensor kernel;             // [out, in, 3, 3, ...], one 3 per grid axis
    std::vector<double> bias;  // [out]
    Activation activation = Activation::Relu;
};

/// The score-prediction head: a channel chain from 2e down to 1 over a
/// fixed grid, ReLU between layers and a sigmoid on the output so every
/// prediction lands in (0,1).
struct HeadParams {
    std::vector<std::size_t> grid;  // [n1..nm]
    std::vector<ConvLayer> layers;

    /// Channel chain must start at 2e, end at 1, and link up; kernels must
    /// be [out, in, 3^rank]. Throws ArchitectureError otherwise.
    void validate(std::size_t embed_dim) const;

    static HeadParams make(std::size_t embed_dim, std::vector<std::size_t> grid,
                           std::uint64_t seed,
                           const std::vector<std::size_t>& hidden = {64, 16});
};

/// Embedding provider plus a trainable linear projection down to size e.
/// The provider stays frozen; "training the backbone" means training this
/// projection.
struct Backbone {
    std::shared_ptr<backends::EmbeddingBackend> provider;
    std::size_t projection_dim = 0;       // e
    Tensor projection;                    // [e, provider dimension]
    std::vector<double> projection_bias;  // [e]

    static Backbone make(std::shared_ptr<backends::EmbeddingBackend> provider,
                         std::size_t projection_dim, std::uint64_t seed);
    void validate() const;
};

/// Text form of a task that the backbone embeds.
std::string task_description(const QueryTask& task);

std::vector<double> embed_text(const Backbone& backbone, const std::string& text);
std::vector<double> embed_task(const Backbone& backbone, const QueryTask& task);

/// [e, n1, n2, n3]: each cell holds the projected embedding of that
/// configuration's canonical text form.
Tensor config_embeddings(const Backbone& backbone, const ConfigurationSpace& space);

/// Broadcast the task embedding across the grid and concatenate the
/// per-cell configuration embeddings: channels [0,e) repeat the task
/// vector at every cell, channels [e,2e) vary per cell.
Tensor build_input(const std::vector<double>& task_emb, const Tensor& config_embs);

// ---------------------------------------------------------------------------
// Forward / backward.
// ---------------------------------------------------------------------------

struct ForwardTrace {
    Tensor input;
    std::vector<Tensor> activations;           // post-activation, per layer
    std::vector<std::vector<double>> columns;  // im2col buffer per layer
    Tensor output;                             // final activation, grid-shaped
};

Tensor forward(const HeadParams& head, const Tensor& input);
ForwardTrace forward_trace(const HeadParams& head, const Tensor& input);

struct HeadGrads {
    std::vector<Tensor> kernel;             // parallel to head.layers
    std::vector<std::vector<double>> bias;  // parallel to head.layers
    Tensor input;                           // dLoss/dInput, for the backbone
};

/// Reverse accumulation through the traced forward pass. `dloss_doutput`
/// has the grid shape.
HeadGrads backward(const HeadParams& head, const ForwardTrace& trace,
                   const Tensor& dloss_doutput);

// ---------------------------------------------------------------------------
// Selection.
// ---------------------------------------------------------------------------

/// Nonzero byte = cell eligible. Null pointer = every cell eligible.
using CellMask = std::vector<std::uint8_t>;

/// Argmax over eligible cells; ties resolve to the lowest linear index.
std::int64_t select_offline(const Tensor& yhat, const CellMask* mask = nullptr);

/// Sample from softmax(yhat / temperature) over eligible cells.
std::int64_t select_online(const Tensor& yhat, double temperature, std::mt19937_64& rng,
                           const CellMask* mask = nullptr);

/// The distribution select_online samples from; ineligible cells get 0.
std::vector<double> softmax_probabilities(const Tensor& yhat, double temperature,
                                          const CellMask* mask = nullptr);

/// Top-k linear indices by score, descending; ties by ascending index.
std::vector<std::int64_t> top_k(const Tensor& yhat, std::size_t k,
                                const CellMask* mask = nullptr);

// ---------------------------------------------------------------------------
// Losses.
// ---------------------------------------------------------------------------

/// Mean over all cells of (yhat - y)^2; y must be fully known.
double loss_offline(const Tensor& yhat, const ScoreTensor& y);

/// Mean over the known cells only; unknown cells contribute nothing.
double loss_offline_masked(const Tensor& yhat, const ScoreTensor& y);

/// (yhat[selected] - y_selected)^2: a one-hot mask times the residual, so
/// every other cell has exactly zero gradient.
double loss_online(const Tensor& yhat, std::int64_t selected, double y_selected);

Tensor dloss_offline(const Tensor& yhat, const ScoreTensor& y, bool masked);
Tensor dloss_online(const Tensor& yhat, std::int64_t selected, double y_selected);

// ---------------------------------------------------------------------------
// Optimizer.
// ---------------------------------------------------------------------------

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t step = 0;
    /// First/second moments keyed by parameter name, so enabling backbone
    /// training mid-run cannot misalign the moment buffers.
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;
};

/// A named view of one parameter array and its gradient.
struct ParamSlot {
    std::string name;
    double* value = nullptr;
    const double* grad = nullptr;
    std::size_t size = 0;
};

/// One Adam update over all slots. Throws TrainingDiverged on non-finite
/// gradients.
void adam_step(AdamState& state, double lr, const std::vector<ParamSlot>& slots);

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

struct TrainHyper {
    double lr = 1e-3;
    std::size_t batch_size = 16;
    double temperature = 1.0;  // online softmax sampling
    bool train_backbone = false;

    void validate() const;
};

struct TrainSample {
    QueryTask task;
    ScoreTensor scores;
};

/// Per-step training records as JSON, e.g. for a JSONL log file.
using LogSink = std::function<void(const nlohmann::json&)>;

/// Ground-truth score for one (task, configuration) pair, queried online.
using OnlineOracle = std::function<double(const QueryTask&, const Configuration&)>;

/// Optional per-task eligibility mask for online selection.
using MaskProvider = std::function<CellMask(const QueryTask&)>;

/// Everything a training run carries: the grid definition, backbone,
/// head, optimizer moments, epoch counter and RNG. Serializable, and a
/// reloaded state continues a run bit-for-bit.
class TrainState {
public:
    TrainState(ConfigurationSpace space, Backbone backbone, HeadParams head,
               TrainHyper hyper, std::uint64_t seed);

    /// Backbone and head built from defaults for the space's grid.
    static TrainState make(ConfigurationSpace space,
                           std::shared_ptr<backends::EmbeddingBackend> provider,
                           std::size_t projection_dim, std::uint64_t seed,
                           TrainHyper hyper = {});

    const ConfigurationSpace& space() const { return space_; }
    const Backbone& backbone() const { return backbone_; }
    const HeadParams& head() const { return head_; }
    HeadParams& head() { return head_; }
    const TrainHyper& hyper() const { return hyper_; }
    TrainHyper& hyper() { return hyper_; }
    const AdamState& adam() const { return adam_; }
    std::uint64_t epoch() const { return epoch_; }
    std::mt19937_64& rng() { return rng_; }

    /// Predicted score tensor for one task; thread-safe and read-only.
    Tensor predict(const QueryTask& task) const;

    nlohmann::json to_json() const;
    /// `provider` must match the checkpoint's provider id and dimension;
    /// otherwise CheckpointMismatch.
    static TrainState from_json(const nlohmann::json& j,
                                std::shared_ptr<backends::EmbeddingBackend> provider);

    void save(const std::filesystem::path& file) const;
    static TrainState load(const std::filesystem::path& file,
                           std::shared_ptr<backends::EmbeddingBackend> provider);

    // Internals shared with the free-function training loops.
    const std::vector<double>& raw_embedding(const std::string& text) const;
    const Tensor& projected_config_embeddings() const;
    void invalidate_projection_cache();
    void bump_epoch() { ++epoch_; }
    AdamState& adam_mutable() { return adam_; }
    Backbone& backbone_mutable() { return backbone_; }

private:
    ConfigurationSpace space_;
    Backbone backbone_;
    HeadParams head_;
    TrainHyper hyper_;
    AdamState adam_;
    std::uint64_t epoch_ = 0;
    std::mt19937_64 rng_;

    // Behind a pointer so TrainState stays movable.
    mutable std::unique_ptr<std::mutex> cache_mutex_ = std::make_unique<std::mutex>();
    mutable std::map<std::string, std::vector<double>> raw_cache_;
    mutable std::optional<Tensor> config_cache_;
};

/// One pass over the samples with dense (known-cell) MSE; returns the mean
/// per-sample loss.
double train_epoch_offline(TrainState& state, const std::vector<TrainSample>& samples,
                           const LogSink& log = {});

void train_offline(TrainState& state, const std::vector<TrainSample>& samples,
                   std::size_t epochs, const LogSink& log = {},
                   const std::optional<std::filesystem::path>& checkpoint_dir = {});

/// One pass over the tasks: softmax-sample a configuration, ask the oracle
/// for that cell's score only, update through the one-hot-masked loss.
double train_epoch_online(TrainState& state, const std::vector<QueryTask>& tasks,
                          const OnlineOracle& oracle, const LogSink& log = {},
                          const MaskProvider& mask_provider = {});

void train_online(TrainState& state, const std::vector<QueryTask>& tasks,
                  const OnlineOracle& oracle, std::size_t epochs,
                  const LogSink& log = {}, const MaskProvider& mask_provider = {});

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

struct SelectorMetrics {
    double acc_top1 = 0;
    double acc_top5 = 0;
    double f1_top1 = 0;
    double f1_top5 = 0;
    double max_f1 = 0;
    double random_f1 = 0;
    double best_single_f1 = 0;

    nlohmann::json to_json() const;
};

/// Metrics from explicit prediction tensors against ground-truth scores.
/// Selection and averaging only ever touch cells the truth knows.
SelectorMetrics selector_metrics(const std::vector<Tensor>& predictions,
                                 const std::vector<ScoreTensor>& truth);

/// Convenience: predict with the trained state, then score.
SelectorMetrics selector_metrics(const TrainState& state,
                                 const std::vector<TrainSample>& testset);

}  // namespace polyroute::selector
