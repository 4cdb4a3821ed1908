#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "sgool/coupled.hpp"
#include "sgool/embedder.hpp"
#include "sgool/saliency.hpp"

namespace sgool {

// d(x,y) = 2*lambda*sqrt(arcsin(|x-y|/2)) as printed, or the conventional
// 2*lambda*arcsin(|x-y|/2)^2 behind the `squared` switch.
enum class DistanceForm { paper, squared };

enum class GuidanceMethod { sgool, global_only };

struct GuidanceConfig {
    double alpha = 0.5;
    double lambda = 1.0;
    int opt_steps = 50;
    double step_size = 0.5;
    double momentum = 0.9;
    bool renorm = true;          // keep |x_T| on the Gaussian shell sqrt(N)
    bool normalize_grad = true;  // step along the unit gradient direction
    double p = 0.93;             // coupled-sampler mixing
    int T = 50;                  // sampler steps
    DistanceForm distance_form = DistanceForm::paper;
    double mask_k = 1.0;  // threshold multiplier for the saliency mask
    int pad = 1;          // crop padding in pixels
    std::optional<std::filesystem::path> external_map;  // fixed external saliency map
};

Tensor spherical_distance(const Tensor& x, const Tensor& y, double lambda,
                          DistanceForm form = DistanceForm::paper);
Tensor saliency_loss(const Embedding& emb_c, const Embedding& emb_s, double lambda,
                     DistanceForm form = DistanceForm::paper);
Tensor global_loss(const Embedding& emb_c, const Embedding& emb_g, double lambda,
                   DistanceForm form = DistanceForm::paper);
// alpha*L_s + (1-alpha)*L_g
Tensor combined_loss(const Tensor& l_s, const Tensor& l_g, double alpha);

struct LossBreakdown {
    double L = 0.0;
    double L_s = 0.0;
    double L_g = 0.0;
    bool degenerate = false;  // no usable saliency region this step
};

// Taped combined loss of a generated image. Saliency geometry is derived
// from the image values with gradients stopped (thresholding and component
// extraction are piecewise constant); crop pixels stay differentiable.
// Degenerate saliency degrades to the global loss and sets the flag.
Tensor guided_loss(const Tensor& x0, const Embedding& emb_c, const JointEncoder& enc,
                   const GuidanceConfig& cfg, GuidanceMethod method, LossBreakdown* breakdown);

struct StepRecord {
    int step = 0;
    double loss = 0.0;
    double loss_s = 0.0;
    double loss_g = 0.0;
    double latent_norm = 0.0;
    double grad_norm = 0.0;  // 0 for the final forward-only record
    bool degenerate = false;
};

struct OptimizationTrace {
    std::vector<StepRecord> records;  // opt_steps + 1 entries
    Tensor initial_image;
    Tensor final_image;
    bool aborted = false;
    std::string abort_reason;
};

struct OptimizeResult {
    Tensor latent;  // optimized x_T
    OptimizationTrace trace;
};

// Gradient descent with momentum on x_T against the combined loss, using the
// constant-memory sampler gradient. A non-finite loss or gradient aborts and
// returns the partial trace; sampler integrity errors propagate.
OptimizeResult optimize_latent(const Tensor& x_T, const Condition& c, const Denoiser& d,
                               const JointEncoder& enc, const GuidanceConfig& cfg,
                               GuidanceMethod method = GuidanceMethod::sgool);

// CSV with header step,L,L_s,L_g,latent_norm,grad_norm,degenerate_flag
void write_trace_csv(const std::filesystem::path& path, const OptimizationTrace& trace);

}  // namespace sgool
