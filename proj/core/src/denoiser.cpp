#include "sgool/denoiser.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "sgool/tensor_io.hpp"

namespace sgool {

using nlohmann::json;

Denoiser::Denoiser(DenoiserConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
    Rng rng = Rng::stream(init_seed, "init/denoiser");
    const int n = static_cast<int>(latent_numel());
    const int in_dim = n + cfg_.time_dim + cfg_.cond_dim;

    layers_.push_back(make_dense(in_dim, cfg_.hidden_dim, rng));
    for (int i = 1; i < cfg_.hidden_layers; ++i) {
        layers_.push_back(make_dense(cfg_.hidden_dim, cfg_.hidden_dim, rng));
    }
    // small output init keeps early eps predictions near zero
    layers_.push_back(make_dense(cfg_.hidden_dim, n, rng, 0.1));

    cond_table_ = normal_tensor(Shape{cfg_.cond_dim, cfg_.num_classes}, rng, 1.0);
    cond_table_.set_requires_grad(true);
    collect_params();
}

void Denoiser::collect_params() {
    params_.clear();
    for (auto& l : layers_) {
        params_.push_back(l.w);
        params_.push_back(l.b);
    }
    params_.push_back(cond_table_);
}

void Denoiser::set_requires_grad(bool on) {
    for (auto& p : params_) p.set_requires_grad(on);
}

Tensor Denoiser::forward_columns(const Tensor& x_cols, const std::vector<int>& ts,
                                 const std::vector<int>& conds) const {
    const int n = static_cast<int>(latent_numel());
    if (x_cols.rank() != 2 || x_cols.shape()[0] != n) {
        throw dim_error("denoiser input must be [" + std::to_string(n) + "xB], got " +
                        shape_str(x_cols.shape()));
    }
    const int B = x_cols.shape()[1];
    if (static_cast<int>(ts.size()) != B || static_cast<int>(conds.size()) != B) {
        throw dim_error("denoiser: per-sample t/cond counts must match batch");
    }

    Tensor tf(Shape{cfg_.time_dim, B}, real(0));
    {
        auto d = tf.mutable_data();
        for (int j = 0; j < B; ++j) {
            Tensor col = time_features(ts[j], cfg_.time_dim);
            auto cd = col.data();
            for (int i = 0; i < cfg_.time_dim; ++i) d[std::size_t(i) * B + j] = cd[i];
        }
    }
    Tensor ce = matmul(cond_table_, onehot_columns(conds, cfg_.num_classes));

    const Tensor pieces[3] = {x_cols, tf, ce};
    Tensor h = concat(pieces);
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
        h = silu(linear(layers_[i].w, layers_[i].b, h));
    }
    return linear(layers_.back().w, layers_.back().b, h);
}

Tensor Denoiser::predict_eps(const Tensor& x_t, int t, const Condition& c) const {
    if (x_t.shape() != cfg_.latent_shape) {
        throw dim_error("denoiser latent shape " + shape_str(x_t.shape()) + ", expected " +
                        shape_str(cfg_.latent_shape));
    }
    if (c.id < 0 || c.id >= cfg_.num_classes) {
        throw contract_error("condition id " + std::to_string(c.id) + " outside vocabulary");
    }
    const int n = static_cast<int>(latent_numel());
    Tensor cols = reshape(x_t, Shape{n, 1});
    Tensor out = forward_columns(cols, {t}, {c.id});
    return reshape(out, cfg_.latent_shape);
}

// ---- training ----

Denoiser train_denoiser(const SyntheticDataset& data, const NoiseSchedule& schedule,
                        const DenoiserTrainConfig& cfg, TrainLog* log) {
    if (data.images.empty()) throw contract_error("train_denoiser: empty dataset");

    DenoiserConfig dcfg;
    dcfg.latent_shape = Shape{1, data.height, data.width};
    dcfg.num_classes = data.num_classes;
    dcfg.hidden_dim = cfg.hidden_dim;
    dcfg.hidden_layers = cfg.hidden_layers;
    Denoiser model(dcfg, cfg.seed);

    Rng batch_rng = Rng::stream(cfg.seed, "train/batch");
    Rng noise_rng = Rng::stream(cfg.seed, "train/noise");
    Adam opt(cfg.lr);

    const int n = static_cast<int>(model.latent_numel());
    const int B = std::min<int>(cfg.batch, static_cast<int>(data.images.size()));

    for (int step = 0; step < cfg.steps; ++step) {
        Tensor x_t(Shape{n, B}, real(0));
        Tensor eps(Shape{n, B}, real(0));
        std::vector<int> ts(B), conds(B);
        {
            auto xd = x_t.mutable_data();
            auto ed = eps.mutable_data();
            for (int j = 0; j < B; ++j) {
                const std::size_t idx = batch_rng.uniform_index(data.images.size());
                const int t = static_cast<int>(noise_rng.uniform_index(schedule.T));
                ts[j] = t;
                conds[j] = data.labels[idx];
                const real a = static_cast<real>(schedule.sqrt_alpha_bar(t));
                const real b = static_cast<real>(schedule.sqrt_one_minus_alpha_bar(t));
                auto img = data.images[idx].data();
                for (int i = 0; i < n; ++i) {
                    const real e = static_cast<real>(noise_rng.normal());
                    ed[std::size_t(i) * B + j] = e;
                    xd[std::size_t(i) * B + j] = a * img[i] + b * e;
                }
            }
        }

        Tensor pred = model.forward_columns(x_t, ts, conds);
        Tensor diff = sub(pred, eps);
        Tensor loss = mean(mul(diff, diff));
        const double lv = double(loss.item());
        if (!std::isfinite(lv)) {
            throw training_error("denoiser training diverged at step " + std::to_string(step) +
                                 " (loss " + std::to_string(lv) + ")");
        }
        if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps)) {
            log->loss_curve.emplace_back(step, lv);
        }
        backward(loss);
        opt.step(model.params());
    }

    model.set_requires_grad(false);  // frozen once trained
    if (log) log->final_eval = eval_denoiser_mse(model, data, schedule, cfg.seed + 1);
    return model;
}

double eval_denoiser_mse(const Denoiser& d, const SyntheticDataset& data,
                         const NoiseSchedule& schedule, std::uint64_t seed, int draws) {
    if (data.images.empty()) throw contract_error("eval_denoiser_mse: empty dataset");
    Rng rng = Rng::stream(seed, "eval/noise");
    const int n = static_cast<int>(d.latent_numel());
    double total = 0.0;
    long count = 0;
    for (int k = 0; k < draws; ++k) {
        const std::size_t idx = rng.uniform_index(data.images.size());
        const int t = static_cast<int>(rng.uniform_index(schedule.T));
        Tensor eps(Shape{n, 1}, real(0));
        Tensor x_t(Shape{n, 1}, real(0));
        auto ed = eps.mutable_data();
        auto xd = x_t.mutable_data();
        const real a = static_cast<real>(schedule.sqrt_alpha_bar(t));
        const real b = static_cast<real>(schedule.sqrt_one_minus_alpha_bar(t));
        auto img = data.images[idx].data();
        for (int i = 0; i < n; ++i) {
            ed[i] = static_cast<real>(rng.normal());
            xd[i] = a * img[i] + b * ed[i];
        }
        Tensor pred = d.forward_columns(x_t, {t}, {data.labels[idx]});
        auto pd = pred.data();
        for (int i = 0; i < n; ++i) {
            const double e = double(pd[i]) - double(ed[i]);
            total += e * e;
            ++count;
        }
    }
    return total / double(count);
}

// ---- checkpoint ----

void Denoiser::save(const std::filesystem::path& dir, int schedule_T, std::uint64_t seed) const {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("cannot create " + dir.string() + ": " + ec.message());

    json manifest;
    manifest["kind"] = "denoiser";
    manifest["latent_shape"] = cfg_.latent_shape;
    manifest["hidden_dim"] = cfg_.hidden_dim;
    manifest["hidden_layers"] = cfg_.hidden_layers;
    manifest["time_dim"] = cfg_.time_dim;
    manifest["cond_dim"] = cfg_.cond_dim;
    manifest["num_classes"] = cfg_.num_classes;
    manifest["schedule"] = {{"T", schedule_T}, {"kind", "linear"}};
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

LoadedDenoiser Denoiser::load(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw io_error("no checkpoint manifest in " + dir.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw format_error("bad checkpoint manifest: " + std::string(e.what()));
    }
    if (manifest.value("kind", "") != "denoiser") {
        throw format_error("checkpoint at " + dir.string() + " is not a denoiser");
    }

    DenoiserConfig cfg;
    cfg.latent_shape = manifest.at("latent_shape").get<Shape>();
    cfg.hidden_dim = manifest.at("hidden_dim").get<int>();
    cfg.hidden_layers = manifest.at("hidden_layers").get<int>();
    cfg.time_dim = manifest.at("time_dim").get<int>();
    cfg.cond_dim = manifest.at("cond_dim").get<int>();
    cfg.num_classes = manifest.at("num_classes").get<int>();

    LoadedDenoiser result;
    result.schedule_T = manifest.at("schedule").at("T").get<int>();
    result.seed = manifest.at("seed").get<std::uint64_t>();
    result.model = Denoiser(cfg, /*init_seed=*/result.seed);

    const std::size_t count = manifest.at("param_count").get<std::size_t>();
    if (count != result.model.params_.size()) {
        throw format_error("checkpoint parameter count mismatch in " + dir.string());
    }
    for (std::size_t i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "param_%03zu.sgt", i);
        Tensor loaded = read_tensor(dir / name, result.model.params_[i].shape());
        auto dst = result.model.params_[i].mutable_data();
        auto src = loaded.data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
    result.model.set_requires_grad(false);
    return result;
}

}  // namespace sgool
