#pragma once

#include <filesystem>
#include <vector>

#include "sgool/denoiser.hpp"
#include "sgool/nn.hpp"
#include "sgool/saliency.hpp"
#include "sgool/synthetic.hpp"
#include "sgool/tensor.hpp"

namespace sgool {

// Unit vector in the joint space. Wrapper keeps the norm contract visible.
struct Embedding {
    Tensor vector;  // [D], L2-normalized
};

struct EncoderConfig {
    Shape input_shape{1, 16, 16};
    int hidden_dim = 128;
    int hidden_layers = 2;
    int embed_dim = 32;
    int num_classes = 8;
    double init_temperature = 0.07;
};

// Image encoder MLP plus a class-embedding table, trained contrastively so
// renders align with their class. Immutable after training.
class JointEncoder {
  public:
    JointEncoder() = default;
    JointEncoder(EncoderConfig cfg, std::uint64_t init_seed);

    const EncoderConfig& config() const { return cfg_; }
    double temperature() const;

    // forward + normalize; differentiable through the image when taped
    Embedding embed_image(const Tensor& img) const;
    Embedding embed_condition(const Condition& c) const;
    // mean of the crop embeddings, renormalized
    Embedding embed_parts(const SaliencyParts& parts) const;

    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }
    void set_requires_grad(bool on);

    void save(const std::filesystem::path& dir, std::uint64_t seed) const;
    static JointEncoder load(const std::filesystem::path& dir);

  private:
    EncoderConfig cfg_;
    std::vector<DenseLayer> layers_;
    Tensor class_table_;  // [DxK]
    Tensor log_temp_;     // scalar, temperature = exp(log_temp)
    std::vector<Tensor> params_;

    void collect_params();
    Tensor encode_raw(const Tensor& img) const;
};

struct EncoderTrainConfig {
    int steps = 1200;
    double lr = 2e-3;
    std::uint64_t seed = 11;
    int log_every = 50;
};

// Symmetric contrastive training over one-render-per-class batches.
// Throws training_error on divergence.
JointEncoder train_encoder(const SyntheticDataset& data, const EncoderTrainConfig& cfg,
                           TrainLog* log = nullptr);

// top-1 retrieval accuracy of class embeddings against held-out renders
double eval_retrieval(const JointEncoder& enc, int per_class, std::uint64_t seed);

Tensor normalize(const Tensor& v);

}  // namespace sgool
