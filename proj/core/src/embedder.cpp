#include "sgool/embedder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "sgool/tensor_io.hpp"

namespace sgool {

using nlohmann::json;

Tensor normalize(const Tensor& v) {
    Tensor n = l2norm(v);
    if (n.item() == real(0)) throw domain_error("cannot normalize a zero vector");
    return div(v, n);
}

JointEncoder::JointEncoder(EncoderConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
    Rng rng = Rng::stream(init_seed, "init/encoder");
    const int in_dim = static_cast<int>(shape_numel(cfg_.input_shape));
    layers_.push_back(make_dense(in_dim, cfg_.hidden_dim, rng));
    for (int i = 1; i < cfg_.hidden_layers; ++i) {
        layers_.push_back(make_dense(cfg_.hidden_dim, cfg_.hidden_dim, rng));
    }
    layers_.push_back(make_dense(cfg_.hidden_dim, cfg_.embed_dim, rng));

    class_table_ = normal_tensor(Shape{cfg_.embed_dim, cfg_.num_classes}, rng, 1.0);
    class_table_.set_requires_grad(true);
    log_temp_ = Tensor::scalar(static_cast<real>(std::log(cfg_.init_temperature)));
    log_temp_.set_requires_grad(true);
    collect_params();
}

void JointEncoder::collect_params() {
    params_.clear();
    for (auto& l : layers_) {
        params_.push_back(l.w);
        params_.push_back(l.b);
    }
    params_.push_back(class_table_);
    params_.push_back(log_temp_);
}

void JointEncoder::set_requires_grad(bool on) {
    for (auto& p : params_) p.set_requires_grad(on);
}

double JointEncoder::temperature() const {
    return std::exp(double(log_temp_.item()));
}

Tensor JointEncoder::encode_raw(const Tensor& img) const {
    if (img.shape() != cfg_.input_shape) {
        throw dim_error("encoder input " + shape_str(img.shape()) + ", expected " +
                        shape_str(cfg_.input_shape));
    }
    Tensor h = reshape(img, Shape{static_cast<int>(img.numel())});
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
        h = tanh(linear(layers_[i].w, layers_[i].b, h));
    }
    return linear(layers_.back().w, layers_.back().b, h);
}

Embedding JointEncoder::embed_image(const Tensor& img) const {
    return {normalize(encode_raw(img))};
}

Embedding JointEncoder::embed_condition(const Condition& c) const {
    if (c.id < 0 || c.id >= cfg_.num_classes) {
        throw contract_error("condition id " + std::to_string(c.id) + " outside vocabulary of " +
                             std::to_string(cfg_.num_classes));
    }
    const int labels[1] = {c.id};
    Tensor col = matmul(class_table_, reshape(onehot_columns(labels, cfg_.num_classes),
                                              Shape{cfg_.num_classes}));
    return {normalize(col)};
}

Embedding JointEncoder::embed_parts(const SaliencyParts& parts) const {
    if (parts.crops.empty()) throw contract_error("embed_parts: no crops");
    Tensor acc;
    for (const auto& crop : parts.crops) {
        Tensor e = embed_image(crop).vector;
        acc = acc.defined() ? add(acc, e) : e;
    }
    Tensor mean_vec = scalar_mul(acc, real(1) / static_cast<real>(parts.crops.size()));
    return {normalize(mean_vec)};
}

// ---- training ----

namespace {

// log(sum(exp(v))) with the usual max shift; the shift is a constant, which
// leaves the gradient untouched
Tensor logsumexp(const Tensor& v) {
    real m = v.data()[0];
    for (real x : v.data()) m = std::max(m, x);
    Tensor shift = Tensor::scalar(m);
    return add(log(sum(exp(sub(v, shift)))), shift);
}

}  // namespace

JointEncoder train_encoder(const SyntheticDataset& data, const EncoderTrainConfig& cfg,
                           TrainLog* log) {
    if (data.images.empty()) throw contract_error("train_encoder: empty dataset");

    EncoderConfig ecfg;
    ecfg.input_shape = Shape{1, data.height, data.width};
    ecfg.num_classes = data.num_classes;
    JointEncoder enc(ecfg, cfg.seed);
    const int K = ecfg.num_classes;

    std::vector<std::vector<std::size_t>> by_class(K);
    for (std::size_t i = 0; i < data.images.size(); ++i) by_class[data.labels[i]].push_back(i);
    for (int k = 0; k < K; ++k) {
        if (by_class[k].empty()) {
            throw contract_error("train_encoder: class " + std::to_string(k) + " has no samples");
        }
    }

    Rng batch_rng = Rng::stream(cfg.seed, "train/batch");
    Adam opt(cfg.lr);

    for (int step = 0; step < cfg.steps; ++step) {
        // one render per class; diagonal pairs are the positives
        std::vector<Tensor> img_emb(K);
        std::vector<Tensor> cls_emb(K);
        for (int k = 0; k < K; ++k) {
            const auto& pool = by_class[k];
            const std::size_t idx = pool[batch_rng.uniform_index(pool.size())];
            img_emb[k] = enc.embed_image(data.images[idx]).vector;
            cls_emb[k] = enc.embed_condition(Condition{k}).vector;
        }
        Tensor inv_tau = exp(scalar_mul(enc.params().back(), real(-1)));  // 1/temperature

        // BxB similarity entries, kept as scalars
        std::vector<std::vector<Tensor>> logits(K, std::vector<Tensor>(K));
        for (int i = 0; i < K; ++i) {
            for (int j = 0; j < K; ++j) {
                logits[i][j] = mul(sum(mul(img_emb[i], cls_emb[j])), inv_tau);
            }
        }

        Tensor total;
        for (int i = 0; i < K; ++i) {
            std::vector<Tensor> row(logits[i].begin(), logits[i].end());
            std::vector<Tensor> col(K);
            for (int j = 0; j < K; ++j) col[j] = logits[j][i];
            Tensor nll_row = sub(logsumexp(concat(row)), logits[i][i]);
            Tensor nll_col = sub(logsumexp(concat(col)), logits[i][i]);
            Tensor both = add(nll_row, nll_col);
            total = total.defined() ? add(total, both) : both;
        }
        Tensor loss = scalar_mul(total, real(1) / static_cast<real>(2 * K));

        const double lv = double(loss.item());
        if (!std::isfinite(lv)) {
            throw training_error("encoder training diverged at step " + std::to_string(step));
        }
        if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
            log->loss_curve.emplace_back(step, lv);
        }
        backward(loss);
        opt.step(enc.params());
    }

    enc.set_requires_grad(false);
    if (log) log->final_eval = eval_retrieval(enc, 16, cfg.seed + 1);
    return enc;
}

double eval_retrieval(const JointEncoder& enc, int per_class, std::uint64_t seed) {
    const int K = enc.config().num_classes;
    const int H = enc.config().input_shape[1];
    const int W = enc.config().input_shape[2];
    Rng rng = Rng::stream(seed, "eval/renders");

    std::vector<std::vector<real>> cls(K);
    for (int k = 0; k < K; ++k) {
        auto e = enc.embed_condition(Condition{k}).vector.data();
        cls[k].assign(e.begin(), e.end());
    }

    int hits = 0, total = 0;
    for (int k = 0; k < K; ++k) {
        for (int r = 0; r < per_class; ++r) {
            Tensor img = render_class(k, H, W, rng);
            auto e = enc.embed_image(img).vector.data();
            int best = -1;
            double best_cos = -2.0;
            for (int j = 0; j < K; ++j) {
                double cosine = 0.0;
                for (std::size_t i = 0; i < e.size(); ++i) cosine += double(e[i]) * double(cls[j][i]);
                if (cosine > best_cos) {
                    best_cos = cosine;
                    best = j;
                }
            }
            hits += best == k ? 1 : 0;
            ++total;
        }
    }
    return double(hits) / double(total);
}

// ---- checkpoint ----

void JointEncoder::save(const std::filesystem::path& dir, std::uint64_t seed) const {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("cannot create " + dir.string() + ": " + ec.message());

    json manifest;
    manifest["kind"] = "encoder";
    manifest["input_shape"] = cfg_.input_shape;
    manifest["hidden_dim"] = cfg_.hidden_dim;
    manifest["hidden_layers"] = cfg_.hidden_layers;
    manifest["embed_dim"] = cfg_.embed_dim;
    manifest["num_classes"] = cfg_.num_classes;
    manifest["init_temperature"] = cfg_.init_temperature;
    manifest["temperature"] = temperature();
    manifest["seed"] = seed;
    manifest["param_count"] = params_.size();

    for (std::size_t i = 0; i < params_.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "param_%03zu.sgt", i);
        write_tensor(dir / name, params_[i]);
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw io_error("cannot write manifest in " + dir.string());
    out << manifest.dump(2) << "\n";
}

JointEncoder JointEncoder::load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw io_error("no checkpoint manifest in " + dir.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw format_error("bad checkpoint manifest: " + std::string(e.what()));
    }
    if (manifest.value("kind", "") != "encoder") {
        throw format_error("checkpoint at " + dir.string() + " is not an encoder");
    }

    EncoderConfig cfg;
    cfg.input_shape = manifest.at("input_shape").get<Shape>();
    cfg.hidden_dim = manifest.at("hidden_dim").get<int>();
    cfg.hidden_layers = manifest.at("hidden_layers").get<int>();
    cfg.embed_dim = manifest.at("embed_dim").get<int>();
    cfg.num_classes = manifest.at("num_classes").get<int>();
    cfg.init_temperature = manifest.at("init_temperature").get<double>();

    JointEncoder enc(cfg, manifest.at("seed").get<std::uint64_t>());
    const std::size_t count = manifest.at("param_count").get<std::size_t>();
    if (count != enc.params_.size()) {
        throw format_error("checkpoint parameter count mismatch in " + dir.string());
    }
    for (std::size_t i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "param_%03zu.sgt", i);
        Tensor loaded = read_tensor(dir / name, enc.params_[i].shape());
        auto dst = enc.params_[i].mutable_data();
        auto src = loaded.data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
    enc.set_requires_grad(false);
    return enc;
}

}  // namespace sgool
