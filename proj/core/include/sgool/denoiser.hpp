#pragma once

#include <filesystem>
#include <vector>

#include "sgool/nn.hpp"
#include "sgool/schedule.hpp"
#include "sgool/synthetic.hpp"
#include "sgool/tensor.hpp"

namespace sgool {

// Toy analog of the prompt: an integer class id in [0, K).
struct Condition {
    int id = 0;
};

struct DenoiserConfig {
    Shape latent_shape{1, 16, 16};
    int hidden_dim = 256;
    int hidden_layers = 3;
    int time_dim = 16;
    int cond_dim = 16;
    int num_classes = 8;
};

struct LoadedDenoiser;

// MLP noise predictor over (flattened latent, sinusoidal time features,
// condition embedding). Output shape equals the latent shape.
class Denoiser {
  public:
    Denoiser() = default;
    Denoiser(DenoiserConfig cfg, std::uint64_t init_seed);

    const DenoiserConfig& config() const { return cfg_; }
    std::size_t latent_numel() const { return shape_numel(cfg_.latent_shape); }

    // eps prediction for one latent; differentiable through x_t when taped
    Tensor predict_eps(const Tensor& x_t, int t, const Condition& c) const;

    // batched flat forward used by training: columns are samples
    Tensor forward_columns(const Tensor& x_cols, const std::vector<int>& ts,
                           const std::vector<int>& conds) const;

    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }
    void set_requires_grad(bool on);

    void save(const std::filesystem::path& dir, int schedule_T, std::uint64_t seed) const;
    static LoadedDenoiser load(const std::filesystem::path& dir);

  private:
    DenoiserConfig cfg_;
    std::vector<DenseLayer> layers_;
    Tensor cond_table_;  // [cond_dimxK], columns are class embeddings
    std::vector<Tensor> params_;

    void collect_params();
};

struct LoadedDenoiser {
    Denoiser model;
    int schedule_T = 0;
    std::uint64_t seed = 0;
};

struct DenoiserTrainConfig {
    int steps = 1200;
    int batch = 32;
    double lr = 1e-3;
    std::uint64_t seed = 7;
    int log_every = 50;
    int hidden_dim = 256;
    int hidden_layers = 3;
};

struct TrainLog {
    std::vector<std::pair<int, double>> loss_curve;  // (step, loss)
    double final_eval = 0.0;                         // held-out metric
};

// eps-MSE training; throws training_error on divergence (NaN loss).
Denoiser train_denoiser(const SyntheticDataset& data, const NoiseSchedule& schedule,
                        const DenoiserTrainConfig& cfg, TrainLog* log = nullptr);

// mean squared eps error over held-out noise draws (predict-zero scores ~1.0)
double eval_denoiser_mse(const Denoiser& d, const SyntheticDataset& data,
                         const NoiseSchedule& schedule, std::uint64_t seed, int draws = 256);

}  // namespace sgool
