// SPDX-License-Identifier: Apache-2.0
#include "memharness/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "memharness/errors.hpp"
#include "memharness/sha256.hpp"

namespace memh {

namespace {

// Structural parameters of the synthetic generators (class centers, ground
// truth) are a fixed function of the task shape so that datasets and probes
// of the same shape describe the same population regardless of stream.
constexpr std::uint64_t kSyntheticStructureRoot = 0x4D454D4853594E54ULL;  // "MEMHSYNT"

std::vector<int> layer_dims(const ModelSpec& spec) {
    std::vector<int> dims;
    dims.push_back(spec.input_dim);
    if (spec.kind == ModelKind::mlp) {
        for (int h : spec.hidden_sizes) dims.push_back(h);
    }
    dims.push_back(spec.output_dim);
    return dims;
}

std::string hidden_name(std::size_t i, const char* part) {
    return "hidden" + std::to_string(i) + "." + part;
}

Eigen::Map<const Eigen::MatrixXd> weight_map(const ParamVector& p, const std::string& name,
                                             int rows, int cols) {
    const auto& seg = p.layout->segment(name);
    if (seg.length != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols)) {
        throw ValidationError("segment " + name + " has unexpected length");
    }
    return {p.values.data() + seg.offset, rows, cols};
}

Eigen::Map<const Eigen::VectorXd> bias_map(const ParamVector& p, const std::string& name,
                                           int len) {
    const auto& seg = p.layout->segment(name);
    if (seg.length != static_cast<std::size_t>(len)) {
        throw ValidationError("segment " + name + " has unexpected length");
    }
    return {p.values.data() + seg.offset, len};
}

Eigen::Map<Eigen::MatrixXd> weight_map_mut(ParamVector& p, const std::string& name, int rows,
                                           int cols) {
    const auto& seg = p.layout->segment(name);
    return {p.values.data() + seg.offset, rows, cols};
}

Eigen::Map<Eigen::VectorXd> bias_map_mut(ParamVector& p, const std::string& name, int len) {
    const auto& seg = p.layout->segment(name);
    return {p.values.data() + seg.offset, len};
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& z) {
    Eigen::MatrixXd p = z;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double mx = p.row(i).maxCoeff();
        p.row(i) = (p.row(i).array() - mx).exp();
        p.row(i) /= p.row(i).sum();
    }
    return p;
}

struct LayerCache {
    Eigen::MatrixXd pre;     // H = A_prev * W + 1 b^T
    Eigen::VectorXd mu;      // stats used to normalize (batch in train mode)
    Eigen::VectorXd var;
    Eigen::MatrixXd normed;  // equal to pre when no norm layer
    Eigen::MatrixXd act;     // tanh(normed)
};

struct ForwardCache {
    std::vector<LayerCache> hidden;
    Eigen::MatrixXd output;  // final linear layer output
};

ForwardCache run_forward(const ModelSpec& spec, const ParamVector& params,
                         const Eigen::MatrixXd& inputs, const NormState& norm, RunMode mode) {
    if (inputs.cols() != spec.input_dim) {
        throw ValidationError("input width " + std::to_string(inputs.cols()) +
                              " does not match model input_dim " +
                              std::to_string(spec.input_dim));
    }
    const auto dims = layer_dims(spec);
    ForwardCache cache;
    Eigen::MatrixXd a = inputs;
    const std::size_t n_hidden = dims.size() - 2;
    if (spec.has_norm_layer() && norm.layers.size() != n_hidden) {
        throw ValidationError("norm state does not match model hidden layers");
    }
    for (std::size_t k = 0; k < n_hidden; ++k) {
        LayerCache lc;
        const auto w = weight_map(params, hidden_name(k, "weight"), dims[k], dims[k + 1]);
        const auto b = bias_map(params, hidden_name(k, "bias"), dims[k + 1]);
        lc.pre = (a * w).rowwise() + b.transpose();
        if (spec.has_norm_layer()) {
            if (mode == RunMode::train) {
                lc.mu = lc.pre.colwise().mean();
                lc.var = (lc.pre.rowwise() - lc.mu.transpose()).array().square().colwise().mean();
            } else {
                lc.mu = norm.layers[k].running_mean;
                lc.var = norm.layers[k].running_var;
            }
            const Eigen::ArrayXd denom = (lc.var.array() + NormState::kEps).sqrt();
            lc.normed = (lc.pre.rowwise() - lc.mu.transpose()).array().rowwise() /
                        denom.transpose();
        } else {
            lc.normed = lc.pre;
        }
        lc.act = lc.normed.array().tanh();
        a = lc.act;
        cache.hidden.push_back(std::move(lc));
    }
    const std::size_t last = dims.size() - 2;
    const auto w_out = weight_map(params, "out.weight", dims[last], dims.back());
    const auto b_out = bias_map(params, "out.bias", dims.back());
    cache.output = (a * w_out).rowwise() + b_out.transpose();
    return cache;
}

// Backpropagates d(loss)/d(output) through the network. In train mode the
// norm layers' batch statistics are themselves functions of the parameters
// and the standard batch-norm backward applies; in eval mode the running
// stats are constants.
ParamVector run_backward(const ModelSpec& spec, const ParamVector& params,
                         const Eigen::MatrixXd& inputs, const ForwardCache& cache,
                         const Eigen::MatrixXd& d_output, RunMode mode) {
    const auto dims = layer_dims(spec);
    ParamVector grad{Eigen::VectorXd::Zero(params.size()), params.layout};
    const std::size_t n_hidden = dims.size() - 2;

    const Eigen::MatrixXd& a_last = n_hidden == 0 ? inputs : cache.hidden.back().act;
    {
        auto gw = weight_map_mut(grad, "out.weight", dims[n_hidden], dims.back());
        auto gb = bias_map_mut(grad, "out.bias", dims.back());
        gw = a_last.transpose() * d_output;
        gb = d_output.colwise().sum();
    }
    if (n_hidden == 0) {
        return grad;
    }

    const auto w_out = weight_map(params, "out.weight", dims[n_hidden], dims.back());
    Eigen::MatrixXd d_act = d_output * w_out.transpose();

    for (std::size_t k = n_hidden; k-- > 0;) {
        const LayerCache& lc = cache.hidden[k];
        // tanh'
        Eigen::MatrixXd d_normed =
            d_act.array() * (1.0 - lc.act.array().square());
        Eigen::MatrixXd d_pre;
        if (spec.has_norm_layer() && mode == RunMode::train) {
            const double m = static_cast<double>(lc.pre.rows());
            const Eigen::ArrayXd inv_std = (lc.var.array() + NormState::kEps).rsqrt();
            const Eigen::RowVectorXd g_mean = d_normed.colwise().mean();
            const Eigen::RowVectorXd gx_mean =
                (d_normed.array() * lc.normed.array()).colwise().mean();
            d_pre = ((d_normed.rowwise() - g_mean).array() -
                     lc.normed.array().rowwise() * gx_mean.array())
                        .rowwise() *
                    inv_std.transpose();
            (void)m;
        } else if (spec.has_norm_layer()) {
            const Eigen::ArrayXd inv_std = (lc.var.array() + NormState::kEps).rsqrt();
            d_pre = d_normed.array().rowwise() * inv_std.transpose();
        } else {
            d_pre = std::move(d_normed);
        }
        const Eigen::MatrixXd& a_prev = k == 0 ? inputs : cache.hidden[k - 1].act;
        {
            auto gw = weight_map_mut(grad, hidden_name(k, "weight"), dims[k], dims[k + 1]);
            auto gb = bias_map_mut(grad, hidden_name(k, "bias"), dims[k + 1]);
            gw = a_prev.transpose() * d_pre;
            gb = d_pre.colwise().sum();
        }
        if (k > 0) {
            const auto w = weight_map(params, hidden_name(k, "weight"), dims[k], dims[k + 1]);
            d_act = d_pre * w.transpose();
        }
    }
    return grad;
}

Eigen::VectorXd infonce_key(int label, int embed_dim) {
    Eigen::VectorXd k = Eigen::VectorXd::Zero(embed_dim);
    k[static_cast<Eigen::Index>(label % embed_dim)] = 1.0;
    return k;
}

ObjectiveKind natural_objective(Task task) {
    switch (task) {
        case Task::classify: return ObjectiveKind::cross_entropy;
        case Task::regress: return ObjectiveKind::squared;
        case Task::teacher_consistency: return ObjectiveKind::squared;
        case Task::contrastive:
            throw ValidationError("contrastive task has no natural standalone loss");
    }
    throw ValidationError("unknown task");
}

}  // namespace

// ---------------------------------------------------------------------------

ParamLayout::ParamLayout(std::vector<SegmentInfo> segments) : segments_(std::move(segments)) {
    std::size_t expect = 0;
    for (const auto& s : segments_) {
        if (s.offset != expect || s.length == 0) {
            throw ValidationError("layout segments must partition [0, len) without gaps");
        }
        expect += s.length;
    }
    total_ = expect;
}

const SegmentInfo& ParamLayout::segment(const std::string& name) const {
    for (const auto& s : segments_) {
        if (s.name == name) return s;
    }
    throw ValidationError("unknown parameter segment: " + name);
}

Eigen::VectorBlock<Eigen::VectorXd> ParamVector::seg(const std::string& name) {
    const auto& s = layout->segment(name);
    return values.segment(static_cast<Eigen::Index>(s.offset),
                          static_cast<Eigen::Index>(s.length));
}

Eigen::VectorBlock<const Eigen::VectorXd> ParamVector::seg(const std::string& name) const {
    const auto& s = layout->segment(name);
    return values.segment(static_cast<Eigen::Index>(s.offset),
                          static_cast<Eigen::Index>(s.length));
}

bool ParamVector::same_layout(const ParamVector& other) const {
    if (layout == other.layout) return true;
    return layout && other.layout && *layout == *other.layout;
}

void ModelSpec::validate() const {
    if (input_dim <= 0 || output_dim <= 0) {
        throw ValidationError("model dims must be positive");
    }
    if (kind == ModelKind::mlp) {
        if (hidden_sizes.empty()) {
            throw ValidationError("mlp requires at least one hidden layer");
        }
        for (int h : hidden_sizes) {
            if (h <= 0) throw ValidationError("hidden sizes must be positive");
        }
    } else if (!hidden_sizes.empty()) {
        throw ValidationError("hidden_sizes only valid for mlp");
    } else if (norm) {
        throw ValidationError("norm layers only valid for mlp");
    }
}

std::shared_ptr<const ParamLayout> ModelSpec::make_layout() const {
    validate();
    std::vector<SegmentInfo> segs;
    std::size_t off = 0;
    auto add = [&](const std::string& name, std::size_t len) {
        segs.push_back(SegmentInfo{name, off, len});
        off += len;
    };
    const auto dims = layer_dims(*this);
    for (std::size_t k = 0; k + 2 < dims.size(); ++k) {
        add(hidden_name(k, "weight"),
            static_cast<std::size_t>(dims[k]) * static_cast<std::size_t>(dims[k + 1]));
        add(hidden_name(k, "bias"), static_cast<std::size_t>(dims[k + 1]));
    }
    add("out.weight",
        static_cast<std::size_t>(dims[dims.size() - 2]) * static_cast<std::size_t>(dims.back()));
    add("out.bias", static_cast<std::size_t>(dims.back()));
    return std::make_shared<const ParamLayout>(std::move(segs));
}

void Dataset::validate() const {
    if (n() <= 0) throw ValidationError("dataset must be nonempty");
    if (is_classification()) {
        if (static_cast<std::int64_t>(labels.size()) != n()) {
            throw ValidationError("labels must cover every example");
        }
        for (int c : labels) {
            if (c < 0 || c >= output_dim) {
                throw ValidationError("class index out of range");
            }
        }
    } else {
        if (targets.rows() != n() || targets.cols() != output_dim) {
            throw ValidationError("targets shape mismatch");
        }
    }
    if (!inputs.allFinite()) throw ValidationError("dataset inputs must be finite");
}

void ObjectiveSpec::validate() const {
    if (lambda < 0) throw ValidationError("lambda must be non-negative");
    if (temperature <= 0) throw ValidationError("temperature must be positive");
}

// ---------------------------------------------------------------------------

ParamVector init_model(const ModelSpec& spec, RngStream& stream) {
    spec.validate();
    auto layout = spec.make_layout();
    ParamVector p{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layout->total())), layout};
    const auto dims = layer_dims(spec);
    std::size_t layer = 0;
    for (std::size_t k = 0; k + 1 < dims.size(); ++k, ++layer) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(dims[k]));
        const bool is_out = (k + 2 == dims.size());
        const std::string wname = is_out ? "out.weight" : hidden_name(k, "weight");
        const std::string bname = is_out ? "out.bias" : hidden_name(k, "bias");
        auto w = p.seg(wname);
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            w[i] = (2.0 * stream.uniform() - 1.0) * bound;
        }
        auto b = p.seg(bname);
        for (Eigen::Index i = 0; i < b.size(); ++i) {
            b[i] = (2.0 * stream.uniform() - 1.0) * bound;
        }
    }
    return p;
}

NormState init_norm_state(const ModelSpec& spec) {
    NormState ns;
    if (spec.has_norm_layer()) {
        for (int h : spec.hidden_sizes) {
            ns.layers.push_back(LayerNormStats{Eigen::VectorXd::Zero(h),
                                               Eigen::VectorXd::Ones(h)});
        }
    }
    return ns;
}

PredictiveOutput forward(const ModelSpec& spec, const ParamVector& params,
                         const Eigen::MatrixXd& inputs, const NormState& norm, RunMode mode,
                         Task task, bool capture_activations) {
    ForwardCache cache = run_forward(spec, params, inputs, norm, mode);
    PredictiveOutput out;
    if (task == Task::classify) {
        out.rows = softmax_rows(cache.output);
    } else {
        out.rows = std::move(cache.output);
    }
    if (capture_activations) {
        for (auto& lc : cache.hidden) {
            out.activations.push_back(std::move(lc.act));
        }
    }
    return out;
}

BatchView make_batch(const Dataset& data, const std::vector<std::uint32_t>& ids,
                     const std::vector<std::uint64_t>& aug_seeds, double aug_noise,
                     const Eigen::VectorXd* weights) {
    if (ids.empty()) throw ValidationError("batch must be nonempty");
    if (!aug_seeds.empty() && aug_seeds.size() != ids.size()) {
        throw ValidationError("aug_seeds must align with batch ids");
    }
    if (aug_noise > 0 && aug_seeds.empty()) {
        throw ValidationError("augmentation noise requires per-example seeds");
    }
    const std::size_t m = ids.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (ids[a] != ids[b]) return ids[a] < ids[b];
        const std::uint64_t sa = aug_seeds.empty() ? 0 : aug_seeds[a];
        const std::uint64_t sb = aug_seeds.empty() ? 0 : aug_seeds[b];
        return sa < sb;
    });

    BatchView batch;
    batch.ids.resize(m);
    batch.inputs.resize(static_cast<Eigen::Index>(m), data.inputs.cols());
    if (data.is_classification()) batch.labels.resize(m);
    else batch.targets.resize(static_cast<Eigen::Index>(m), data.targets.cols());
    batch.weights = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(m));

    for (std::size_t r = 0; r < m; ++r) {
        const std::size_t src = order[r];
        const std::uint32_t id = ids[src];
        if (id >= data.n()) throw ValidationError("batch id out of range");
        batch.ids[r] = id;
        Eigen::RowVectorXd row = data.inputs.row(static_cast<Eigen::Index>(id));
        if (aug_noise > 0) {
            RngStream view{"view", aug_seeds[src], 0};
            for (Eigen::Index c = 0; c < row.size(); ++c) {
                row[c] += aug_noise * view.normal();
            }
        }
        batch.inputs.row(static_cast<Eigen::Index>(r)) = row;
        if (data.is_classification()) {
            batch.labels[r] = data.labels[id];
        } else {
            batch.targets.row(static_cast<Eigen::Index>(r)) =
                data.targets.row(static_cast<Eigen::Index>(id));
        }
        if (weights != nullptr) {
            batch.weights[static_cast<Eigen::Index>(r)] = (*weights)[static_cast<Eigen::Index>(src)];
        }
    }
    return batch;
}

LossGrad loss_and_grad(const ModelSpec& spec, const ParamVector& params, const BatchView& batch,
                       const NormState& norm, const ObjectiveSpec& objective,
                       const ObjectiveContext& ctx, RunMode mode) {
    objective.validate();
    if (batch.size() == 0) throw ValidationError("batch must be nonempty");
    const double m = static_cast<double>(batch.size());

    ForwardCache cache = run_forward(spec, params, batch.inputs, norm, mode);
    const Eigen::MatrixXd& z = cache.output;
    Eigen::MatrixXd d_output = Eigen::MatrixXd::Zero(z.rows(), z.cols());

    LossGrad result;
    double loss = 0.0;

    switch (objective.kind) {
        case ObjectiveKind::squared:
        case ObjectiveKind::teacher_consistency: {
            if (batch.targets.rows() != z.rows()) {
                throw ValidationError("objective requires regression targets");
            }
            Eigen::MatrixXd teacher_out;
            const bool use_teacher =
                objective.kind == ObjectiveKind::teacher_consistency && objective.lambda > 0;
            if (use_teacher) {
                if (ctx.teacher == nullptr) {
                    throw ValidationError("teacher_consistency objective requires teacher weights");
                }
                teacher_out = forward(spec, *ctx.teacher, batch.inputs, norm, RunMode::eval,
                                      Task::regress)
                                  .rows;
            }
            for (Eigen::Index i = 0; i < z.rows(); ++i) {
                const double w = batch.weights[i];
                const Eigen::RowVectorXd err = z.row(i) - batch.targets.row(i);
                double li = 0.5 * err.squaredNorm();
                Eigen::RowVectorXd dz = err;
                if (use_teacher) {
                    const Eigen::RowVectorXd terr = z.row(i) - teacher_out.row(i);
                    li += objective.lambda * terr.squaredNorm();
                    dz += 2.0 * objective.lambda * terr;
                }
                loss += w * li / m;
                d_output.row(i) = (w / m) * dz;
            }
            break;
        }
        case ObjectiveKind::cross_entropy: {
            if (static_cast<Eigen::Index>(batch.labels.size()) != z.rows()) {
                throw ValidationError("cross entropy requires class labels");
            }
            const Eigen::MatrixXd p = softmax_rows(z);
            for (Eigen::Index i = 0; i < z.rows(); ++i) {
                const double w = batch.weights[i];
                const int y = batch.labels[static_cast<std::size_t>(i)];
                if (y < 0 || y >= z.cols()) throw ValidationError("label out of range");
                loss += -w * std::log(std::max(p(i, y), 1e-300)) / m;
                Eigen::RowVectorXd dz = p.row(i);
                dz[y] -= 1.0;
                d_output.row(i) = (w / m) * dz;
            }
            break;
        }
        case ObjectiveKind::infonce: {
            if (static_cast<Eigen::Index>(batch.labels.size()) != z.rows()) {
                throw ValidationError("infonce requires cluster labels");
            }
            const int dim = static_cast<int>(z.cols());
            const std::int64_t n_neg = ctx.queue == nullptr ? 0 : ctx.queue->size();
            result.embeddings.resize(z.rows(), z.cols());
            const double tau = objective.temperature;
            for (Eigen::Index i = 0; i < z.rows(); ++i) {
                const double w = batch.weights[i];
                const Eigen::VectorXd e = z.row(i).transpose();
                const double nrm = std::max(e.norm(), 1e-12);
                const Eigen::VectorXd u = e / nrm;
                result.embeddings.row(i) = u.transpose();
                const Eigen::VectorXd key =
                    infonce_key(batch.labels[static_cast<std::size_t>(i)], dim);

                Eigen::VectorXd logits(n_neg + 1);
                logits[0] = u.dot(key) / tau;
                for (std::int64_t j = 0; j < n_neg; ++j) {
                    logits[j + 1] = u.dot(ctx.queue->entries[static_cast<std::size_t>(j)].value) / tau;
                }
                const double mx = logits.maxCoeff();
                const Eigen::VectorXd ex = (logits.array() - mx).exp();
                const double zsum = ex.sum();
                const Eigen::VectorXd prob = ex / zsum;
                loss += w * (-logits[0] + mx + std::log(zsum)) / m;

                Eigen::VectorXd du = (prob[0] - 1.0) * key;
                for (std::int64_t j = 0; j < n_neg; ++j) {
                    du += prob[j + 1] * ctx.queue->entries[static_cast<std::size_t>(j)].value;
                }
                du /= tau;
                const Eigen::VectorXd de = (du - u * u.dot(du)) / nrm;
                d_output.row(i) = (w / m) * de.transpose();
            }
            break;
        }
    }

    result.loss = loss;
    result.grad = run_backward(spec, params, batch.inputs, cache, d_output, mode);
    result.norm = norm;
    if (spec.has_norm_layer() && mode == RunMode::train) {
        for (std::size_t k = 0; k < cache.hidden.size(); ++k) {
            const auto& lc = cache.hidden[k];
            auto& layer = result.norm.layers[k];
            layer.running_mean = (1.0 - norm.rho) * layer.running_mean + norm.rho * lc.mu;
            layer.running_var = (1.0 - norm.rho) * layer.running_var + norm.rho * lc.var;
        }
    }
    return result;
}

Dataset make_synthetic(Task task, std::int64_t n, int input_dim, int output_dim, double noise,
                       RngStream& stream) {
    if (n <= 0) throw ValidationError("synthetic dataset requires n > 0");
    if (input_dim <= 0 || output_dim <= 0) throw ValidationError("synthetic dims must be positive");
    if (noise < 0) throw ValidationError("noise must be non-negative");

    Dataset data;
    data.task = task;
    data.output_dim = output_dim;
    data.inputs.resize(n, input_dim);

    if (task == Task::classify || task == Task::contrastive) {
        if (output_dim > 2 * input_dim) {
            throw ValidationError("class count must be at most 2 * input_dim");
        }
        // Axis-aligned antipodal centers: well separated by construction.
        Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(output_dim, input_dim);
        for (int c = 0; c < output_dim; ++c) {
            const int axis = (c / 2) % input_dim;
            centers(c, axis) = (c % 2 == 0 ? 2.5 : -2.5);
        }
        data.labels.resize(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) {
            const int c = static_cast<int>(i % output_dim);
            data.labels[static_cast<std::size_t>(i)] = c;
            for (int d = 0; d < input_dim; ++d) {
                data.inputs(i, d) = centers(c, d) + noise * stream.normal();
            }
        }
    } else {
        const std::string shape = std::string("structure/") + to_string(task) + "/" +
                                  std::to_string(input_dim) + "/" + std::to_string(output_dim);
        RngStream structural{"structure", derive_seed(kSyntheticStructureRoot, shape), 0};
        Eigen::MatrixXd w_star(input_dim, output_dim);
        Eigen::VectorXd b_star(output_dim);
        for (Eigen::Index i = 0; i < w_star.size(); ++i) {
            w_star.data()[i] = 2.0 * structural.uniform() - 1.0;
        }
        for (Eigen::Index i = 0; i < b_star.size(); ++i) {
            b_star[i] = 2.0 * structural.uniform() - 1.0;
        }
        data.targets.resize(n, output_dim);
        for (std::int64_t i = 0; i < n; ++i) {
            for (int d = 0; d < input_dim; ++d) {
                data.inputs(i, d) = stream.normal();
            }
            Eigen::RowVectorXd y = data.inputs.row(i) * w_star + b_star.transpose();
            for (int d = 0; d < output_dim; ++d) {
                data.targets(i, d) = y[d] + noise * stream.normal();
            }
        }
    }
    data.validate();
    return data;
}

Probe make_probe(Task task, std::int64_t n, int input_dim, int output_dim, double noise,
                 RngStream& stream) {
    return Probe{make_synthetic(task, n, input_dim, output_dim, noise, stream), true};
}

NormState bn_recalibrate(const ModelSpec& spec, const ParamVector& params, const NormState& norm,
                         const Eigen::MatrixXd& calib_inputs) {
    if (calib_inputs.rows() == 0) {
        throw ValidationError("calibration slice must be nonempty");
    }
    if (!spec.has_norm_layer()) {
        return norm;
    }
    NormState out = norm;
    const auto dims = layer_dims(spec);
    Eigen::MatrixXd a = calib_inputs;
    for (std::size_t k = 0; k + 2 < dims.size(); ++k) {
        const auto w = weight_map(params, hidden_name(k, "weight"), dims[k], dims[k + 1]);
        const auto b = bias_map(params, hidden_name(k, "bias"), dims[k + 1]);
        const Eigen::MatrixXd pre = (a * w).rowwise() + b.transpose();
        const Eigen::VectorXd mu = pre.colwise().mean();
        const Eigen::VectorXd var =
            (pre.rowwise() - mu.transpose()).array().square().colwise().mean();
        out.layers[k].running_mean = mu;
        out.layers[k].running_var = var;
        const Eigen::ArrayXd denom = (var.array() + NormState::kEps).sqrt();
        a = ((pre.rowwise() - mu.transpose()).array().rowwise() / denom.transpose()).tanh();
    }
    return out;
}

double eval_mean_loss(const ModelSpec& spec, const ParamVector& params, const Dataset& data,
                      const NormState& norm) {
    const ObjectiveKind kind = natural_objective(data.task);
    const PredictiveOutput out = forward(spec, params, data.inputs, norm, RunMode::eval,
                                         kind == ObjectiveKind::cross_entropy ? Task::classify
                                                                              : Task::regress);
    double loss = 0.0;
    const double n = static_cast<double>(data.n());
    if (kind == ObjectiveKind::cross_entropy) {
        for (Eigen::Index i = 0; i < out.rows.rows(); ++i) {
            loss += -std::log(std::max(out.rows(i, data.labels[static_cast<std::size_t>(i)]),
                                       1e-300)) /
                    n;
        }
    } else {
        loss = 0.5 * (out.rows - data.targets).squaredNorm() / n;
    }
    return loss;
}

std::vector<std::pair<double, double>> barrier_scan(const ModelSpec& spec, const ParamVector& a,
                                                    const ParamVector& b, const Dataset& data,
                                                    int points, std::int64_t calib_count) {
    if (!a.same_layout(b)) throw ValidationError("barrier_scan endpoints must share a layout");
    if (points < 2) throw ValidationError("barrier_scan needs at least two points");
    const std::int64_t c = std::min<std::int64_t>(std::max<std::int64_t>(calib_count, 1), data.n());
    const Eigen::MatrixXd calib = data.inputs.topRows(c);

    std::vector<std::pair<double, double>> result;
    result.reserve(static_cast<std::size_t>(points));
    for (int k = 0; k < points; ++k) {
        const double lambda = static_cast<double>(k) / static_cast<double>(points - 1);
        ParamVector theta = a.with_values((1.0 - lambda) * a.values + lambda * b.values);
        NormState norm = init_norm_state(spec);
        if (spec.has_norm_layer()) {
            norm = bn_recalibrate(spec, theta, norm, calib);
        }
        result.emplace_back(lambda, eval_mean_loss(spec, theta, data, norm));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {
constexpr char kDatasetMagic[9] = "MEMH-DS1";
constexpr std::uint32_t kDatasetVersion = 1;
}  // namespace

Bytes serialize_dataset(const Dataset& data, bool frozen_probe) {
    data.validate();
    ByteWriter w;
    w.raw(kDatasetMagic, 8);
    w.u32_le(kDatasetVersion);
    w.u32_le(static_cast<std::uint32_t>(data.n()));

    const bool has_labels = data.is_classification();
    const bool has_targets = !has_labels;
    std::uint32_t flags = 0;
    if (has_labels) flags |= 1u;
    if (has_targets) flags |= 2u;
    if (frozen_probe) flags |= 4u;

    w.u32_le(static_cast<std::uint32_t>(data.task));
    w.u32_le(static_cast<std::uint32_t>(data.input_dim()));
    w.u32_le(static_cast<std::uint32_t>(data.output_dim));
    w.u32_le(flags);
    w.u32_le(static_cast<std::uint32_t>(has_targets ? data.targets.cols() : 0));

    for (Eigen::Index i = 0; i < data.inputs.rows(); ++i) {
        for (Eigen::Index j = 0; j < data.inputs.cols(); ++j) {
            w.f64_le(data.inputs(i, j));
        }
    }
    if (has_labels) {
        for (int c : data.labels) w.u32_le(static_cast<std::uint32_t>(c));
    }
    if (has_targets) {
        for (Eigen::Index i = 0; i < data.targets.rows(); ++i) {
            for (Eigen::Index j = 0; j < data.targets.cols(); ++j) {
                w.f64_le(data.targets(i, j));
            }
        }
    }
    const Digest d = sha256(w.data());
    w.raw(d.data(), d.size());
    return w.take();
}

Dataset parse_dataset(const Bytes& bytes, bool* frozen_probe) {
    if (bytes.size() < 48) throw ParseError("dataset blob too small");
    const Digest stored = [&] {
        Digest d{};
        std::copy(bytes.end() - 32, bytes.end(), d.begin());
        return d;
    }();
    if (sha256(bytes.data(), bytes.size() - 32) != stored) {
        throw VerificationError("dataset checksum mismatch");
    }
    ByteReader r(bytes.data(), bytes.size() - 32);
    const Bytes magic = r.raw(8);
    if (std::string(magic.begin(), magic.end()) != kDatasetMagic) {
        throw ParseError("bad dataset magic");
    }
    if (r.u32_le() != kDatasetVersion) throw VerificationError("dataset version mismatch");
    const std::uint32_t n = r.u32_le();

    Dataset data;
    data.task = static_cast<Task>(r.u32_le());
    const std::uint32_t input_dim = r.u32_le();
    data.output_dim = static_cast<int>(r.u32_le());
    const std::uint32_t flags = r.u32_le();
    const std::uint32_t target_cols = r.u32_le();
    if (frozen_probe != nullptr) *frozen_probe = (flags & 4u) != 0;

    data.inputs.resize(n, input_dim);
    for (std::uint32_t i = 0; i < n; ++i) {
        for (std::uint32_t j = 0; j < input_dim; ++j) {
            data.inputs(i, j) = r.f64_le();
        }
    }
    if (flags & 1u) {
        data.labels.resize(n);
        for (std::uint32_t i = 0; i < n; ++i) {
            data.labels[i] = static_cast<int>(r.u32_le());
        }
    }
    if (flags & 2u) {
        data.targets.resize(n, target_cols);
        for (std::uint32_t i = 0; i < n; ++i) {
            for (std::uint32_t j = 0; j < target_cols; ++j) {
                data.targets(i, j) = r.f64_le();
            }
        }
    }
    if (!r.done()) throw ParseError("trailing bytes in dataset blob");
    data.validate();
    return data;
}

void save_dataset(const Dataset& data, const std::string& path, bool frozen_probe) {
    const Bytes b = serialize_dataset(data, frozen_probe);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

Dataset load_dataset(const std::string& path, bool* frozen_probe) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open: " + path);
    Bytes b((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_dataset(b, frozen_probe);
}

const char* to_string(Task task) {
    switch (task) {
        case Task::classify: return "classify";
        case Task::regress: return "regress";
        case Task::contrastive: return "contrastive";
        case Task::teacher_consistency: return "teacher_consistency";
    }
    return "?";
}

const char* to_string(ModelKind kind) {
    switch (kind) {
        case ModelKind::linear_regression: return "linear_regression";
        case ModelKind::logistic_regression: return "logistic_regression";
        case ModelKind::mlp: return "mlp";
        case ModelKind::embedder: return "embedder";
    }
    return "?";
}

const char* to_string(ObjectiveKind kind) {
    switch (kind) {
        case ObjectiveKind::squared: return "squared";
        case ObjectiveKind::cross_entropy: return "cross_entropy";
        case ObjectiveKind::infonce: return "infonce";
        case ObjectiveKind::teacher_consistency: return "teacher_consistency";
    }
    return "?";
}

}  // namespace memh
