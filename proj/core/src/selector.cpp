#include "polyroute/selector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace polyroute::selector {

namespace {

std::size_t pow3(std::size_t m) {
    std::size_t k = 1;
    while (m--) k *= 3;
    return k;
}

std::size_t grid_cells(const std::vector<std::size_t>& grid) {
    std::size_t p = 1;
    for (const auto d : grid) p *= d;
    return p;
}

std::vector<std::size_t> tensor_grid(const GridShape& shape) {
    std::vector<std::size_t> out;
    out.reserve(shape.size());
    for (const int d : shape) out.push_back(static_cast<std::size_t>(d));
    return out;
}

// For every (patch offset, output position) pair: the source linear index
// within one channel, or -1 where the 3-wide kernel hangs over the border
// and zero padding applies.
std::vector<std::int64_t> patch_map(const std::vector<std::size_t>& grid) {
    const std::size_t m = grid.size();
    const std::size_t K = pow3(m);
    const std::size_t P = grid_cells(grid);
    std::vector<std::size_t> stride(m, 1);
    for (std::size_t a = m - 1; a-- > 0;) stride[a] = stride[a + 1] * grid[a + 1];

    std::vector<std::int64_t> map(K * P);
    std::vector<std::size_t> pos(m, 0);
    for (std::size_t p = 0; p < P; ++p) {
        for (std::size_t t = 0; t < K; ++t) {
            std::int64_t src = 0;
            bool inside = true;
            std::size_t tt = t;
            for (std::size_t a = m; a-- > 0;) {
                const int off = static_cast<int>(tt % 3) - 1;
                tt /= 3;
                const std::int64_t q = static_cast<std::int64_t>(pos[a]) + off;
                if (q < 0 || q >= static_cast<std::int64_t>(grid[a])) {
                    inside = false;
                    break;
                }
                src += q * static_cast<std::int64_t>(stride[a]);
            }
            map[t * P + p] = inside ? src : -1;
        }
        for (std::size_t a = m; a-- > 0;) {
            if (++pos[a] < grid[a]) break;
            pos[a] = 0;
        }
    }
    return map;
}

void im2col(const double* x, std::size_t channels, std::size_t K, std::size_t P,
            const std::int64_t* map, double* col) {
    for (std::size_t c = 0; c < channels; ++c) {
        const double* xc = x + c * P;
        for (std::size_t t = 0; t < K; ++t) {
            double* dst = col + (c * K + t) * P;
            const std::int64_t* mp = map + t * P;
            for (std::size_t p = 0; p < P; ++p) dst[p] = mp[p] < 0 ? 0.0 : xc[mp[p]];
        }
    }
}

void col2im_add(const double* col, std::size_t channels, std::size_t K, std::size_t P,
                const std::int64_t* map, double* x) {
    for (std::size_t c = 0; c < channels; ++c) {
        double* xc = x + c * P;
        for (std::size_t t = 0; t < K; ++t) {
            const double* src = col + (c * K + t) * P;
            const std::int64_t* mp = map + t * P;
            for (std::size_t p = 0; p < P; ++p)
                if (mp[p] >= 0) xc[mp[p]] += src[p];
        }
    }
}

// C[M,N] += A[M,K] * B[K,N], all row-major.
void gemm(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
          double* C) {
    for (std::size_t i = 0; i < M; ++i) {
        const double* a = A + i * K;
        double* c = C + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const double av = a[k];
            const double* b = B + k * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T.
void gemm_abt(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
              double* C) {
    for (std::size_t i = 0; i < M; ++i) {
        const double* a = A + i * K;
        double* c = C + i * N;
        for (std::size_t j = 0; j < N; ++j) {
            const double* b = B + j * K;
            double acc = 0.0;
            for (std::size_t k = 0; k < K; ++k) acc += a[k] * b[k];
            c[j] += acc;
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N].
void gemm_atb(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
              double* C) {
    for (std::size_t k = 0; k < K; ++k) {
        const double* a = A + k * M;
        const double* b = B + k * N;
        for (std::size_t i = 0; i < M; ++i) {
            const double av = a[i];
            if (av == 0.0) continue;
            double* c = C + i * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

void apply_activation(Activation act, double* x, std::size_t n) {
    if (act == Activation::Relu) {
        for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
    } else {
        for (std::size_t i = 0; i < n; ++i) x[i] = 1.0 / (1.0 + std::exp(-x[i]));
    }
}

std::vector<double> project(const Backbone& b, const std::vector<double>& raw) {
    const std::size_t e = b.projection_dim;
    const std::size_t d = raw.size();
    std::vector<double> out(e);
    const double* w = b.projection.data();
    for (std::size_t i = 0; i < e; ++i) {
        double acc = b.projection_bias[i];
        const double* row = w + i * d;
        for (std::size_t j = 0; j < d; ++j) acc += row[j] * raw[j];
        out[i] = acc;
    }
    return out;
}

void check_shapes_match(const Tensor& yhat, const ScoreTensor& y) {
    if (yhat.shape() != tensor_grid(y.shape()))
        throw InvalidInput("prediction and score tensors have different shapes");
}

}  // namespace

std::string to_string(Activation a) {
    return a == Activation::Relu ? "relu" : "sigmoid";
}

Activation parse_activation(const std::string& name) {
    if (name == "relu") return Activation::Relu;
    if (name == "sigmoid") return Activation::Sigmoid;
    throw InvalidInput("unknown activation: " + name);
}

void HeadParams::validate(std::size_t embed_dim) const {
    if (grid.empty()) throw ArchitectureError("head grid has no axes");
    for (const auto d : grid)
        if (d < 1) throw ArchitectureError("head grid axis of size zero");
    if (layers.empty()) throw ArchitectureError("head has no layers");
    if (layers.front().in_channels != 2 * embed_dim)
        throw ArchitectureError("first layer must take 2e input channels");
    if (layers.back().out_channels != 1)
        throw ArchitectureError("last layer must emit one channel");
    if (layers.back().activation != Activation::Sigmoid)
        throw ArchitectureError("last layer must end in a sigmoid");

    const std::size_t K = pow3(grid.size());
    std::size_t chain = layers.front().in_channels;
    for (const auto& ly : layers) {
        if (ly.in_channels != chain)
            throw ArchitectureError("layer channel chain does not link up");
        if (ly.in_channels < 1 || ly.out_channels < 1)
            throw ArchitectureError("layer with zero channels");
        std::vector<std::size_t> expected{ly.out_channels, ly.in_channels};
        expected.insert(expected.end(), grid.size(), 3);
        if (ly.kernel.shape() != expected)
            throw ArchitectureError("kernel shape does not match [out, in, 3^rank]");
        if (ly.bias.size() != ly.out_channels)
            throw ArchitectureError("bias size does not match output channels");
        if (ly.kernel.size() != ly.out_channels * ly.in_channels * K)
            throw ArchitectureError("kernel element count mismatch");
        chain = ly.out_channels;
    }
}

HeadParams HeadParams::make(std::size_t embed_dim, std::vector<std::size_t> grid,
                            std::uint64_t seed, const std::vector<std::size_t>& hidden) {
    if (embed_dim < 1) throw ArchitectureError("embedding dimension must be >= 1");
    HeadParams head;
    head.grid = std::move(grid);

    std::vector<std::size_t> chain{2 * embed_dim};
    chain.insert(chain.end(), hidden.begin(), hidden.end());
    chain.push_back(1);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    const std::size_t K = pow3(head.grid.size());
    for (std::size_t l = 0; l + 1 < chain.size(); ++l) {
        ConvLayer ly;
        ly.in_channels = chain[l];
        ly.out_channels = chain[l + 1];
        ly.activation = (l + 2 == chain.size()) ? Activation::Sigmoid : Activation::Relu;
        std::vector<std::size_t> kshape{ly.out_channels, ly.in_channels};
        kshape.insert(kshape.end(), head.grid.size(), 3);
        ly.kernel = Tensor(std::move(kshape));
        const double fan_in = static_cast<double>(ly.in_channels * K);
        const double scale = ly.activation == Activation::Relu ? std::sqrt(2.0 / fan_in)
                                                               : std::sqrt(1.0 / fan_in);
        for (std::size_t i = 0; i < ly.kernel.size(); ++i) ly.kernel[i] = dist(rng) * scale;
        ly.bias.assign(ly.out_channels, 0.0);
        head.layers.push_back(std::move(ly));
    }
    head.validate(embed_dim);
    return head;
}

Backbone Backbone::make(std::shared_ptr<backends::EmbeddingBackend> provider,
                        std::size_t projection_dim, std::uint64_t seed) {
    if (!provider) throw InvalidInput("backbone needs an embedding provider");
    if (projection_dim < 1) throw ArchitectureError("projection dimension must be >= 1");
    Backbone b;
    b.provider = std::move(provider);
    b.projection_dim = projection_dim;
    const std::size_t d = static_cast<std::size_t>(b.provider->dimension());
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    b.projection = Tensor({projection_dim, d});
    const double scale = std::sqrt(1.0 / static_cast<double>(d));
    for (std::size_t i = 0; i < b.projection.size(); ++i) b.projection[i] = dist(rng) * scale;
    b.projection_bias.assign(projection_dim, 0.0);
    return b;
}

void Backbone::validate() const {
    if (!provider) throw InvalidInput("backbone has no embedding provider");
    if (projection_dim < 1) throw ArchitectureError("projection dimension must be >= 1");
    const std::vector<std::size_t> expected{projection_dim,
                                            static_cast<std::size_t>(provider->dimension())};
    if (projection.shape() != expected)
        throw ArchitectureError("projection shape does not match [e, provider dim]");
    if (projection_bias.size() != projection_dim)
        throw ArchitectureError("projection bias size does not match e");
}

std::string task_description(const QueryTask& task) {
    // Context is deliberately left out: it may be attached later by
    // retrieval, and routing should not depend on that.
    return "language: " + task.language.code + "\nquestion: " + task.question;
}

std::vector<double> embed_text(const Backbone& backbone, const std::string& text) {
    backbone.validate();
    auto vectors = backbone.provider->embed({text});
    vectors.at(0).validate();
    return project(backbone, vectors[0].values);
}

std::vector<double> embed_task(const Backbone& backbone, const QueryTask& task) {
    return embed_text(backbone, task_description(task));
}

Tensor config_embeddings(const Backbone& backbone, const ConfigurationSpace& space) {
    backbone.validate();
    const auto configs = space.enumerate();
    std::vector<std::string> texts;
    texts.reserve(configs.size());
    for (const auto& c : configs) texts.push_back(c.canonical());
    auto vectors = backbone.provider->embed(texts);

    const std::size_t e = backbone.projection_dim;
    const std::size_t P = configs.size();
    std::vector<std::size_t> shape{e};
    for (const int d : space.shape()) shape.push_back(static_cast<std::size_t>(d));
    Tensor out(std::move(shape));
    for (std::size_t p = 0; p < P; ++p) {
        vectors[p].validate();
        const auto projected = project(backbone, vectors[p].values);
        for (std::size_t i = 0; i < e; ++i) out[i * P + p] = projected[i];
    }
    return out;
}

Tensor build_input(const std::vector<double>& task_emb, const Tensor& config_embs) {
    if (config_embs.rank() < 2)
        throw ArchitectureError("config embedding tensor must be [e, n1..nm]");
    const std::size_t e = config_embs.shape()[0];
    if (task_emb.size() != e)
        throw ArchitectureError("task embedding size does not match config channels");
    std::vector<std::size_t> grid(config_embs.shape().begin() + 1, config_embs.shape().end());
    const std::size_t P = grid_cells(grid);

    std::vector<std::size_t> shape{2 * e};
    shape.insert(shape.end(), grid.begin(), grid.end());
    Tensor out(std::move(shape));
    for (std::size_t i = 0; i < e; ++i)
        for (std::size_t p = 0; p < P; ++p) out[i * P + p] = task_emb[i];
    std::copy(config_embs.data(), config_embs.data() + e * P, out.data() + e * P);
    return out;
}

ForwardTrace forward_trace(const HeadParams& head, const Tensor& input) {
    if (head.layers.empty()) throw ArchitectureError("head has no layers");
    if (input.rank() != head.grid.size() + 1)
        throw ArchitectureError("input rank does not match [channels, grid]");
    if (input.shape()[0] != head.layers.front().in_channels)
        throw ArchitectureError("input channel count does not match the first layer");
    for (std::size_t a = 0; a < head.grid.size(); ++a)
        if (input.shape()[a + 1] != head.grid[a])
            throw ArchitectureError("input grid does not match the head grid");

    const std::size_t P = grid_cells(head.grid);
    const std::size_t K = pow3(head.grid.size());
    const auto map = patch_map(head.grid);

    ForwardTrace trace;
    trace.input = input;
    const Tensor* cur = &trace.input;
    for (const auto& ly : head.layers) {
        std::vector<double> col(ly.in_channels * K * P);
        im2col(cur->data(), ly.in_channels, K, P, map.data(), col.data());

        std::vector<std::size_t> shape{ly.out_channels};
        shape.insert(shape.end(), head.grid.begin(), head.grid.end());
        Tensor act(std::move(shape));
        for (std::size_t c = 0; c < ly.out_channels; ++c)
            std::fill(act.data() + c * P, act.data() + (c + 1) * P, ly.bias[c]);
        gemm(ly.out_channels, P, ly.in_channels * K, ly.kernel.data(), col.data(), act.data());
        apply_activation(ly.activation, act.data(), act.size());

        trace.columns.push_back(std::move(col));
        trace.activations.push_back(std::move(act));
        cur = &trace.activations.back();
    }
    trace.output = Tensor(head.grid, trace.activations.back().values());
    return trace;
}

Tensor forward(const HeadParams& head, const Tensor& input) {
    return forward_trace(head, input).output;
}

HeadGrads backward(const HeadParams& head, const ForwardTrace& trace,
                   const Tensor& dloss_doutput) {
    const std::size_t L = head.layers.size();
    if (trace.activations.size() != L || trace.columns.size() != L)
        throw ArchitectureError("forward trace does not match the head");
    const std::size_t P = grid_cells(head.grid);
    if (dloss_doutput.size() != P)
        throw ArchitectureError("output gradient does not match the grid");
    const std::size_t K = pow3(head.grid.size());
    const auto map = patch_map(head.grid);

    HeadGrads grads;
    grads.kernel.resize(L);
    grads.bias.resize(L);

    std::vector<double> dcur(dloss_doutput.values());  // [1, P] to start
    for (std::size_t l = L; l-- > 0;) {
        const auto& ly = head.layers[l];
        const Tensor& post = trace.activations[l];

        std::vector<double> dpre(ly.out_channels * P);
        if (ly.activation == Activation::Relu) {
            for (std::size_t i = 0; i < dpre.size(); ++i)
                dpre[i] = post[i] > 0.0 ? dcur[i] : 0.0;
        } else {
            for (std::size_t i = 0; i < dpre.size(); ++i)
                dpre[i] = dcur[i] * post[i] * (1.0 - post[i]);
        }

        grads.bias[l].assign(ly.out_channels, 0.0);
        for (std::size_t c = 0; c < ly.out_channels; ++c)
            for (std::size_t p = 0; p < P; ++p) grads.bias[l][c] += dpre[c * P + p];

        grads.kernel[l] = Tensor(ly.kernel.shape());
        gemm_abt(ly.out_channels, ly.in_channels * K, P, dpre.data(),
                 trace.columns[l].data(), grads.kernel[l].data());

        std::vector<double> dcol(ly.in_channels * K * P, 0.0);
        gemm_atb(ly.in_channels * K, P, ly.out_channels, ly.kernel.data(), dpre.data(),
                 dcol.data());

        std::vector<double> dprev(ly.in_channels * P, 0.0);
        col2im_add(dcol.data(), ly.in_channels, K, P, map.data(), dprev.data());
        dcur = std::move(dprev);
    }
    grads.input = Tensor(trace.input.shape(), std::move(dcur));
    return grads;
}

std::int64_t select_offline(const Tensor& yhat, const CellMask* mask) {
    if (mask && mask->size() != yhat.size())
        throw InvalidInput("cell mask size does not match the score tensor");
    std::int64_t best = -1;
    double best_score = 0.0;
    for (std::size_t i = 0; i < yhat.size(); ++i) {
        if (mask && !(*mask)[i]) continue;
        if (best < 0 || yhat[i] > best_score) {
            best = static_cast<std::int64_t>(i);
            best_score = yhat[i];
        }
    }
    if (best < 0) throw InvalidInput("no eligible cells to select from");
    return best;
}

std::vector<double> softmax_probabilities(const Tensor& yhat, double temperature,
                                          const CellMask* mask) {
    if (temperature <= 0.0) throw InvalidInput("softmax temperature must be positive");
    if (mask && mask->size() != yhat.size())
        throw InvalidInput("cell mask size does not match the score tensor");
    double max_v = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < yhat.size(); ++i) {
        if (mask && !(*mask)[i]) continue;
        if (!any || yhat[i] > max_v) max_v = yhat[i];
        any = true;
    }
    if (!any) throw InvalidInput("no eligible cells to select from");

    std::vector<double> probs(yhat.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < yhat.size(); ++i) {
        if (mask && !(*mask)[i]) continue;
        probs[i] = std::exp((yhat[i] - max_v) / temperature);
        total += probs[i];
    }
    for (auto& p : probs) p /= total;
    return probs;
}

std::int64_t select_online(const Tensor& yhat, double temperature, std::mt19937_64& rng,
                           const CellMask* mask) {
    const auto probs = softmax_probabilities(yhat, temperature, mask);
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double cum = 0.0;
    std::int64_t last = -1;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        last = static_cast<std::int64_t>(i);
        cum += probs[i];
        if (u < cum) return last;
    }
    return last;  // rounding ran past 1.0
}

std::vector<std::int64_t> top_k(const Tensor& yhat, std::size_t k, const CellMask* mask) {
    if (mask && mask->size() != yhat.size())
        throw InvalidInput("cell mask size does not match the score tensor");
    std::vector<std::int64_t> idx;
    for (std::size_t i = 0; i < yhat.size(); ++i)
        if (!mask || (*mask)[i]) idx.push_back(static_cast<std::int64_t>(i));
    const std::size_t n = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + n, idx.end(),
                      [&](std::int64_t a, std::int64_t b) {
                          if (yhat[a] != yhat[b]) return yhat[a] > yhat[b];
                          return a < b;
                      });
    idx.resize(n);
    return idx;
}

double loss_offline(const Tensor& yhat, const ScoreTensor& y) {
    check_shapes_match(yhat, y);
    y.require_dense();
    double total = 0.0;
    for (std::int64_t i = 0; i < y.size(); ++i) {
        const double d = yhat[static_cast<std::size_t>(i)] - y.raw(i);
        total += d * d;
    }
    return total / static_cast<double>(y.size());
}

double loss_offline_masked(const Tensor& yhat, const ScoreTensor& y) {
    check_shapes_match(yhat, y);
    double total = 0.0;
    std::int64_t known = 0;
    for (std::int64_t i = 0; i < y.size(); ++i) {
        if (!y.known(i)) continue;
        const double d = yhat[static_cast<std::size_t>(i)] - y.raw(i);
        total += d * d;
        ++known;
    }
    if (known == 0) throw InvalidInput("score tensor has no known cells");
    return total / static_cast<double>(known);
}

double loss_online(const Tensor& yhat, std::int64_t selected, double y_selected) {
    if (selected < 0 || static_cast<std::size_t>(selected) >= yhat.size())
        throw InvalidInput("selected cell is out of range");
    if (!std::isfinite(y_selected) || y_selected < 0.0 || y_selected > 1.0)
        throw InvalidInput("observed score must lie in [0,1]");
    const double d = yhat[static_cast<std::size_t>(selected)] - y_selected;
    return d * d;
}

Tensor dloss_offline(const Tensor& yhat, const ScoreTensor& y, bool masked) {
    check_shapes_match(yhat, y);
    Tensor g(yhat.shape());
    std::int64_t count = 0;
    if (masked) {
        for (std::int64_t i = 0; i < y.size(); ++i)
            if (y.known(i)) ++count;
        if (count == 0) throw InvalidInput("score tensor has no known cells");
    } else {
        y.require_dense();
        count = y.size();
    }
    const double scale = 2.0 / static_cast<double>(count);
    for (std::int64_t i = 0; i < y.size(); ++i) {
        if (!y.known(i)) continue;
        const auto u = static_cast<std::size_t>(i);
        g[u] = scale * (yhat[u] - y.raw(i));
    }
    return g;
}

Tensor dloss_online(const Tensor& yhat, std::int64_t selected, double y_selected) {
    loss_online(yhat, selected, y_selected);  // range checks
    Tensor g(yhat.shape());
    const auto u = static_cast<std::size_t>(selected);
    g[u] = 2.0 * (yhat[u] - y_selected);
    return g;
}

void adam_step(AdamState& state, double lr, const std::vector<ParamSlot>& slots) {
    for (const auto& slot : slots)
        for (std::size_t i = 0; i < slot.size; ++i)
            if (!std::isfinite(slot.grad[i]))
                throw TrainingDiverged("non-finite gradient in " + slot.name);

    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (const auto& slot : slots) {
        auto& m = state.m[slot.name];
        auto& v = state.v[slot.name];
        if (m.empty()) m.assign(slot.size, 0.0);
        if (v.empty()) v.assign(slot.size, 0.0);
        if (m.size() != slot.size || v.size() != slot.size)
            throw InvalidInput("optimizer moment size mismatch for " + slot.name);
        for (std::size_t i = 0; i < slot.size; ++i) {
            const double g = slot.grad[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            slot.value[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

void TrainHyper::validate() const {
    if (lr <= 0.0) throw InvalidInput("learning rate must be positive");
    if (batch_size < 1) throw InvalidInput("batch size must be >= 1");
    if (temperature <= 0.0) throw InvalidInput("softmax temperature must be positive");
}

TrainState::TrainState(ConfigurationSpace space, Backbone backbone, HeadParams head,
                       TrainHyper hyper, std::uint64_t seed)
    : space_(std::move(space)),
      backbone_(std::move(backbone)),
      head_(std::move(head)),
      hyper_(hyper),
      rng_(seed) {
    hyper_.validate();
    backbone_.validate();
    head_.validate(backbone_.projection_dim);
    if (head_.grid != tensor_grid(space_.shape()))
        throw ArchitectureError("head grid does not match the configuration space");
}

TrainState TrainState::make(ConfigurationSpace space,
                            std::shared_ptr<backends::EmbeddingBackend> provider,
                            std::size_t projection_dim, std::uint64_t seed, TrainHyper hyper) {
    auto backbone = Backbone::make(std::move(provider), projection_dim, seed + 1);
    auto head = HeadParams::make(projection_dim, tensor_grid(space.shape()), seed + 2);
    return TrainState(std::move(space), std::move(backbone), std::move(head), hyper, seed);
}

const std::vector<double>& TrainState::raw_embedding(const std::string& text) const {
    std::lock_guard<std::mutex> lock(*cache_mutex_);
    auto it = raw_cache_.find(text);
    if (it == raw_cache_.end()) {
        auto vectors = backbone_.provider->embed({text});
        vectors.at(0).validate();
        it = raw_cache_.emplace(text, std::move(vectors[0].values)).first;
    }
    return it->second;
}

const Tensor& TrainState::projected_config_embeddings() const {
    std::lock_guard<std::mutex> lock(*cache_mutex_);
    if (!config_cache_) {
        const auto configs = space_.enumerate();
        const std::size_t e = backbone_.projection_dim;
        const std::size_t P = configs.size();
        std::vector<std::size_t> shape{e};
        for (const int d : space_.shape()) shape.push_back(static_cast<std::size_t>(d));
        Tensor out(std::move(shape));
        for (std::size_t p = 0; p < P; ++p) {
            const std::string text = configs[p].canonical();
            auto cached = raw_cache_.find(text);
            if (cached == raw_cache_.end()) {
                auto vectors = backbone_.provider->embed({text});
                vectors.at(0).validate();
                cached = raw_cache_.emplace(text, std::move(vectors[0].values)).first;
            }
            const auto projected = project(backbone_, cached->second);
            for (std::size_t i = 0; i < e; ++i) out[i * P + p] = projected[i];
        }
        config_cache_ = std::move(out);
    }
    return *config_cache_;
}

void TrainState::invalidate_projection_cache() {
    std::lock_guard<std::mutex> lock(*cache_mutex_);
    config_cache_.reset();
}

Tensor TrainState::predict(const QueryTask& task) const {
    const auto& raw = raw_embedding(task_description(task));
    const auto task_emb = project(backbone_, raw);
    const auto input = build_input(task_emb, projected_config_embeddings());
    return forward(head_, input);
}

nlohmann::json TrainState::to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& ly : head_.layers) {
        layers.push_back({{"in", ly.in_channels},
                          {"out", ly.out_channels},
                          {"activation", to_string(ly.activation)},
                          {"kernel", ly.kernel.values()},
                          {"bias", ly.bias}});
    }
    std::ostringstream rng_text;
    rng_text << rng_;
    return {{"format", "polyroute-selector"},
            {"version", 1},
            {"space", space_.to_json()},
            {"backbone",
             {{"provider_id", backbone_.provider->provider_id()},
              {"dimension", backbone_.provider->dimension()},
              {"projection_dim", backbone_.projection_dim},
              {"projection", backbone_.projection.values()},
              {"bias", backbone_.projection_bias}}},
            {"head", {{"grid", head_.grid}, {"layers", layers}}},
            {"hyper",
             {{"lr", hyper_.lr},
              {"batch_size", hyper_.batch_size},
              {"temperature", hyper_.temperature},
              {"train_backbone", hyper_.train_backbone}}},
            {"adam",
             {{"beta1", adam_.beta1},
              {"beta2", adam_.beta2},
              {"eps", adam_.eps},
              {"step", adam_.step},
              {"m", adam_.m},
              {"v", adam_.v}}},
            {"epoch", epoch_},
            {"rng", rng_text.str()}};
}

TrainState TrainState::from_json(const nlohmann::json& j,
                                 std::shared_ptr<backends::EmbeddingBackend> provider) {
    if (!provider) throw InvalidInput("checkpoint loading needs an embedding provider");
    try {
        if (j.at("format").get<std::string>() != "polyroute-selector" ||
            j.at("version").get<int>() != 1)
            throw CheckpointMismatch("not a recognized selector checkpoint");

        const auto& jb = j.at("backbone");
        if (jb.at("provider_id").get<std::string>() != provider->provider_id())
            throw CheckpointMismatch("checkpoint was trained with provider '" +
                                     jb.at("provider_id").get<std::string>() +
                                     "', got '" + provider->provider_id() + "'");
        if (jb.at("dimension").get<int>() != provider->dimension())
            throw CheckpointMismatch("provider dimension does not match the checkpoint");

        auto space = ConfigurationSpace::from_json(j.at("space"));

        Backbone backbone;
        backbone.provider = std::move(provider);
        backbone.projection_dim = jb.at("projection_dim").get<std::size_t>();
        backbone.projection =
            Tensor({backbone.projection_dim,
                    static_cast<std::size_t>(jb.at("dimension").get<int>())},
                   jb.at("projection").get<std::vector<double>>());
        backbone.projection_bias = jb.at("bias").get<std::vector<double>>();

        HeadParams head;
        head.grid = j.at("head").at("grid").get<std::vector<std::size_t>>();
        for (const auto& jl : j.at("head").at("layers")) {
            ConvLayer ly;
            ly.in_channels = jl.at("in").get<std::size_t>();
            ly.out_channels = jl.at("out").get<std::size_t>();
            ly.activation = parse_activation(jl.at("activation").get<std::string>());
            std::vector<std::size_t> kshape{ly.out_channels, ly.in_channels};
            kshape.insert(kshape.end(), head.grid.size(), 3);
            ly.kernel = Tensor(std::move(kshape), jl.at("kernel").get<std::vector<double>>());
            ly.bias = jl.at("bias").get<std::vector<double>>();
            head.layers.push_back(std::move(ly));
        }

        const auto& jh = j.at("hyper");
        TrainHyper hyper;
        hyper.lr = jh.at("lr").get<double>();
        hyper.batch_size = jh.at("batch_size").get<std::size_t>();
        hyper.temperature = jh.at("temperature").get<double>();
        hyper.train_backbone = jh.at("train_backbone").get<bool>();

        TrainState state(std::move(space), std::move(backbone), std::move(head), hyper, 0);

        const auto& ja = j.at("adam");
        state.adam_.beta1 = ja.at("beta1").get<double>();
        state.adam_.beta2 = ja.at("beta2").get<double>();
        state.adam_.eps = ja.at("eps").get<double>();
        state.adam_.step = ja.at("step").get<std::uint64_t>();
        state.adam_.m = ja.at("m").get<std::map<std::string, std::vector<double>>>();
        state.adam_.v = ja.at("v").get<std::map<std::string, std::vector<double>>>();
        state.epoch_ = j.at("epoch").get<std::uint64_t>();
        std::istringstream rng_text(j.at("rng").get<std::string>());
        rng_text >> state.rng_;
        if (!rng_text) throw ParseError("checkpoint has a malformed rng state");
        return state;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed checkpoint: ") + e.what());
    }
}

void TrainState::save(const std::filesystem::path& file) const {
    std::ofstream out(file);
    if (!out) throw InvalidInput("cannot write checkpoint: " + file.string());
    out << to_json().dump() << '\n';
}

TrainState TrainState::load(const std::filesystem::path& file,
                            std::shared_ptr<backends::EmbeddingBackend> provider) {
    std::ifstream in(file);
    if (!in) throw InvalidInput("cannot open checkpoint: " + file.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint " + file.string() + ": " + e.what());
    }
    return from_json(j, std::move(provider));
}

namespace {

struct GradAccum {
    std::vector<Tensor> kernel;
    std::vector<std::vector<double>> bias;
    Tensor proj;
    std::vector<double> proj_bias;
    std::size_t count = 0;

    void reset(const HeadParams& head, const Backbone& backbone, bool with_backbone) {
        kernel.clear();
        bias.clear();
        for (const auto& ly : head.layers) {
            kernel.emplace_back(ly.kernel.shape());
            bias.emplace_back(ly.out_channels, 0.0);
        }
        if (with_backbone) {
            proj = Tensor(backbone.projection.shape());
            proj_bias.assign(backbone.projection_bias.size(), 0.0);
        }
        count = 0;
    }

    void add_head(const HeadGrads& g) {
        for (std::size_t l = 0; l < kernel.size(); ++l) {
            for (std::size_t i = 0; i < kernel[l].size(); ++i)
                kernel[l][i] += g.kernel[l][i];
            for (std::size_t i = 0; i < bias[l].size(); ++i) bias[l][i] += g.bias[l][i];
        }
        ++count;
    }

    void scale(double f) {
        for (auto& k : kernel)
            for (std::size_t i = 0; i < k.size(); ++i) k[i] *= f;
        for (auto& b : bias)
            for (auto& x : b) x *= f;
        for (std::size_t i = 0; i < proj.size(); ++i) proj[i] *= f;
        for (auto& x : proj_bias) x *= f;
    }
};

// Push dLoss/dInput through the broadcast+concat layout and the linear
// projection: the task half sums over cells, the config half is per cell.
void accumulate_backbone(const Tensor& dinput, const std::vector<double>& raw_task,
                         const std::vector<const std::vector<double>*>& raw_configs,
                         std::size_t e, GradAccum& acc) {
    const std::size_t P = raw_configs.size();
    const std::size_t d = raw_task.size();
    for (std::size_t i = 0; i < e; ++i) {
        double s = 0.0;
        for (std::size_t p = 0; p < P; ++p) s += dinput[i * P + p];
        acc.proj_bias[i] += s;
        double* row = acc.proj.data() + i * d;
        for (std::size_t jj = 0; jj < d; ++jj) row[jj] += s * raw_task[jj];
    }
    for (std::size_t p = 0; p < P; ++p) {
        const auto& r = *raw_configs[p];
        for (std::size_t i = 0; i < e; ++i) {
            const double g = dinput[(e + i) * P + p];
            if (g == 0.0) continue;
            acc.proj_bias[i] += g;
            double* row = acc.proj.data() + i * d;
            for (std::size_t jj = 0; jj < d; ++jj) row[jj] += g * r[jj];
        }
    }
}

void apply_batch(TrainState& state, GradAccum& acc) {
    if (acc.count == 0) return;
    acc.scale(1.0 / static_cast<double>(acc.count));
    auto& head = state.head();
    std::vector<ParamSlot> slots;
    for (std::size_t l = 0; l < head.layers.size(); ++l) {
        const std::string base = "head.layer" + std::to_string(l);
        slots.push_back({base + ".kernel", head.layers[l].kernel.data(),
                         acc.kernel[l].data(), acc.kernel[l].size()});
        slots.push_back({base + ".bias", head.layers[l].bias.data(), acc.bias[l].data(),
                         acc.bias[l].size()});
    }
    if (state.hyper().train_backbone) {
        auto& bb = state.backbone_mutable();
        slots.push_back({"backbone.projection", bb.projection.data(), acc.proj.data(),
                         acc.proj.size()});
        slots.push_back({"backbone.bias", bb.projection_bias.data(), acc.proj_bias.data(),
                         acc.proj_bias.size()});
    }
    adam_step(state.adam_mutable(), state.hyper().lr, slots);
    if (state.hyper().train_backbone) state.invalidate_projection_cache();
}

std::vector<const std::vector<double>*> raw_config_pointers(
    const TrainState& state, const std::vector<Configuration>& configs) {
    std::vector<const std::vector<double>*> out;
    out.reserve(configs.size());
    for (const auto& c : configs) out.push_back(&state.raw_embedding(c.canonical()));
    return out;
}

}  // namespace

double train_epoch_offline(TrainState& state, const std::vector<TrainSample>& samples,
                           const LogSink& log) {
    if (samples.empty()) throw InvalidInput("offline training needs at least one sample");
    const auto grid = state.head().grid;
    for (const auto& s : samples)
        if (tensor_grid(s.scores.shape()) != grid)
            throw InvalidInput("sample score tensor does not match the configuration grid");

    const auto configs = state.space().enumerate();
    const auto raw_configs = raw_config_pointers(state, configs);
    const bool with_backbone = state.hyper().train_backbone;
    const std::size_t e = state.backbone().projection_dim;

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state.rng());

    GradAccum acc;
    double epoch_loss = 0.0;
    std::size_t step_index = 0;
    for (std::size_t start = 0; start < order.size();
         start += state.hyper().batch_size) {
        const std::size_t stop =
            std::min(order.size(), start + state.hyper().batch_size);
        acc.reset(state.head(), state.backbone(), with_backbone);
        double batch_loss = 0.0;
        for (std::size_t u = start; u < stop; ++u) {
            const auto& sample = samples[order[u]];
            const auto& raw_task =
                state.raw_embedding(task_description(sample.task));
            const auto task_emb = project(state.backbone(), raw_task);
            const auto input =
                build_input(task_emb, state.projected_config_embeddings());
            const auto trace = forward_trace(state.head(), input);
            batch_loss += loss_offline_masked(trace.output, sample.scores);
            const auto dout = dloss_offline(trace.output, sample.scores, true);
            const auto grads = backward(state.head(), trace, dout);
            acc.add_head(grads);
            if (with_backbone)
                accumulate_backbone(grads.input, raw_task, raw_configs, e, acc);
        }
        epoch_loss += batch_loss;
        apply_batch(state, acc);
        if (log)
            log({{"epoch", state.epoch()},
                 {"step", step_index},
                 {"loss", batch_loss / static_cast<double>(stop - start)}});
        ++step_index;
    }
    return epoch_loss / static_cast<double>(samples.size());
}

void train_offline(TrainState& state, const std::vector<TrainSample>& samples,
                   std::size_t epochs, const LogSink& log,
                   const std::optional<std::filesystem::path>& checkpoint_dir) {
    for (std::size_t i = 0; i < epochs; ++i) {
        train_epoch_offline(state, samples, log);
        state.bump_epoch();
        if (checkpoint_dir) {
            std::filesystem::create_directories(*checkpoint_dir);
            state.save(*checkpoint_dir /
                       ("epoch_" + std::to_string(state.epoch()) + ".json"));
        }
    }
}

double train_epoch_online(TrainState& state, const std::vector<QueryTask>& tasks,
                          const OnlineOracle& oracle, const LogSink& log,
                          const MaskProvider& mask_provider) {
    if (tasks.empty()) throw InvalidInput("online training needs at least one task");
    if (!oracle) throw InvalidInput("online training needs a score oracle");

    const auto configs = state.space().enumerate();
    const auto raw_configs = raw_config_pointers(state, configs);
    const bool with_backbone = state.hyper().train_backbone;
    const std::size_t e = state.backbone().projection_dim;

    std::vector<std::size_t> order(tasks.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state.rng());

    GradAccum acc;
    double epoch_loss = 0.0;
    std::size_t sample_index = 0;
    for (std::size_t start = 0; start < order.size();
         start += state.hyper().batch_size) {
        const std::size_t stop =
            std::min(order.size(), start + state.hyper().batch_size);
        acc.reset(state.head(), state.backbone(), with_backbone);
        for (std::size_t u = start; u < stop; ++u) {
            const auto& task = tasks[order[u]];
            const auto& raw_task = state.raw_embedding(task_description(task));
            const auto task_emb = project(state.backbone(), raw_task);
            const auto input =
                build_input(task_emb, state.projected_config_embeddings());
            const auto trace = forward_trace(state.head(), input);

            CellMask mask;
            const CellMask* mask_ptr = nullptr;
            if (mask_provider) {
                mask = mask_provider(task);
                mask_ptr = &mask;
            }
            const auto selected = select_online(trace.output, state.hyper().temperature,
                                                state.rng(), mask_ptr);
            const auto config = state.space().multi_index(static_cast<int>(selected));
            const double y = oracle(task, config);
            const double sample_loss = loss_online(trace.output, selected, y);
            epoch_loss += sample_loss;
            const auto dout = dloss_online(trace.output, selected, y);
            const auto grads = backward(state.head(), trace, dout);
            acc.add_head(grads);
            if (with_backbone)
                accumulate_backbone(grads.input, raw_task, raw_configs, e, acc);
            if (log)
                log({{"epoch", state.epoch()},
                     {"step", sample_index},
                     {"loss", sample_loss},
                     {"selected_config", config.canonical()},
                     {"y", y}});
            ++sample_index;
        }
        apply_batch(state, acc);
    }
    return epoch_loss / static_cast<double>(tasks.size());
}

void train_online(TrainState& state, const std::vector<QueryTask>& tasks,
                  const OnlineOracle& oracle, std::size_t epochs, const LogSink& log,
                  const MaskProvider& mask_provider) {
    for (std::size_t i = 0; i < epochs; ++i) {
        train_epoch_online(state, tasks, oracle, log, mask_provider);
        state.bump_epoch();
    }
}

nlohmann::json SelectorMetrics::to_json() const {
    return {{"acc_top1", acc_top1},       {"acc_top5", acc_top5},
            {"f1_top1", f1_top1},         {"f1_top5", f1_top5},
            {"max_f1", max_f1},           {"random_f1", random_f1},
            {"best_single_f1", best_single_f1}};
}

SelectorMetrics selector_metrics(const std::vector<Tensor>& predictions,
                                 const std::vector<ScoreTensor>& truth) {
    if (predictions.empty() || predictions.size() != truth.size())
        throw InvalidInput("metrics need matching non-empty prediction and truth lists");

    const std::size_t cells = predictions.front().size();
    std::vector<double> config_sum(cells, 0.0);
    std::vector<std::int64_t> config_count(cells, 0);

    SelectorMetrics out;
    const double n = static_cast<double>(predictions.size());
    for (std::size_t s = 0; s < predictions.size(); ++s) {
        const auto& pred = predictions[s];
        const auto& y = truth[s];
        check_shapes_match(pred, y);
        if (pred.size() != cells)
            throw InvalidInput("prediction tensors have inconsistent shapes");

        CellMask known(cells, 0);
        double y_max = 0.0;
        double y_sum = 0.0;
        std::int64_t known_count = 0;
        for (std::int64_t i = 0; i < y.size(); ++i) {
            if (!y.known(i)) continue;
            known[static_cast<std::size_t>(i)] = 1;
            const double v = y.raw(i);
            if (known_count == 0 || v > y_max) y_max = v;
            y_sum += v;
            ++known_count;
            config_sum[static_cast<std::size_t>(i)] += v;
            ++config_count[static_cast<std::size_t>(i)];
        }
        if (known_count == 0)
            throw InvalidInput("a truth tensor has no known cells");

        const auto top5 = top_k(pred, 5, &known);
        const auto top1 = top5.front();
        const double f1_at_1 = y.raw(top1);
        double f1_at_5 = 0.0;
        bool best_in_5 = false;
        for (const auto c : top5) {
            f1_at_5 = std::max(f1_at_5, y.raw(c));
            if (y.raw(c) == y_max) best_in_5 = true;
        }

        out.acc_top1 += (f1_at_1 == y_max) ? 1.0 : 0.0;
        out.acc_top5 += best_in_5 ? 1.0 : 0.0;
        out.f1_top1 += f1_at_1;
        out.f1_top5 += f1_at_5;
        out.max_f1 += y_max;
        out.random_f1 += y_sum / static_cast<double>(known_count);
    }

    out.acc_top1 /= n;
    out.acc_top5 /= n;
    out.f1_top1 /= n;
    out.f1_top5 /= n;
    out.max_f1 /= n;
    out.random_f1 /= n;

    double best_single = 0.0;
    bool any = false;
    for (std::size_t c = 0; c < cells; ++c) {
        if (config_count[c] == 0) continue;
        const double mean = config_sum[c] / static_cast<double>(config_count[c]);
        if (!any || mean > best_single) best_single = mean;
        any = true;
    }
    out.best_single_f1 = best_single;
    return out;
}

SelectorMetrics selector_metrics(const TrainState& state,
                                 const std::vector<TrainSample>& testset) {
    std::vector<Tensor> predictions;
    std::vector<ScoreTensor> truth;
    predictions.reserve(testset.size());
    truth.reserve(testset.size());
    for (const auto& sample : testset) {
        predictions.push_back(state.predict(sample.task));
        truth.push_back(sample.scores);
    }
    return selector_metrics(predictions, truth);
}

}  // namespace polyroute::selector
