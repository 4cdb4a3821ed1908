#include "sgool/guidance.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace sgool {

namespace {

void check_unit(const Tensor& v, const char* who) {
    double ss = 0.0;
    for (real x : v.data()) ss += double(x) * double(x);
    if (std::abs(std::sqrt(ss) - 1.0) > 1e-4) {
        throw contract_error(std::string(who) + ": input is not unit-norm (|v| = " +
                             std::to_string(std::sqrt(ss)) + ")");
    }
}

double vec_norm(std::span<const real> v) {
    double ss = 0.0;
    for (real x : v) ss += double(x) * double(x);
    return std::sqrt(ss);
}

}  // namespace

Tensor spherical_distance(const Tensor& x, const Tensor& y, double lambda, DistanceForm form) {
    if (x.shape() != y.shape()) {
        throw dim_error("spherical_distance: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    }
    if (lambda <= 0.0) throw contract_error("spherical_distance: lambda must be positive");
    check_unit(x, "spherical_distance");
    check_unit(y, "spherical_distance");

    Tensor half_gap = scalar_mul(l2norm(sub(x, y)), real(0.5));
    Tensor angle = arcsin(half_gap);
    Tensor core = form == DistanceForm::paper ? sqrt(angle) : mul(angle, angle);
    return scalar_mul(core, static_cast<real>(2.0 * lambda));
}

Tensor saliency_loss(const Embedding& emb_c, const Embedding& emb_s, double lambda,
                     DistanceForm form) {
    return spherical_distance(emb_c.vector, emb_s.vector, lambda, form);
}

Tensor global_loss(const Embedding& emb_c, const Embedding& emb_g, double lambda,
                   DistanceForm form) {
    return spherical_distance(emb_c.vector, emb_g.vector, lambda, form);
}

Tensor combined_loss(const Tensor& l_s, const Tensor& l_g, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
        throw contract_error("combined_loss: alpha must lie in [0,1], got " + std::to_string(alpha));
    }
    return add(scalar_mul(l_s, static_cast<real>(alpha)),
               scalar_mul(l_g, static_cast<real>(1.0 - alpha)));
}

Tensor guided_loss(const Tensor& x0, const Embedding& emb_c, const JointEncoder& enc,
                   const GuidanceConfig& cfg, GuidanceMethod method, LossBreakdown* breakdown) {
    Tensor l_g = global_loss(emb_c, enc.embed_image(x0), cfg.lambda, cfg.distance_form);

    LossBreakdown local;
    local.L_g = double(l_g.item());

    Tensor total;
    if (method == GuidanceMethod::global_only) {
        total = l_g;
        local.L = double(total.item());
        if (breakdown) *breakdown = local;
        return total;
    }

    // saliency geometry from the image values only; gradients flow through
    // crop pixels, never through the mask or box positions
    Tensor frozen = x0.detach();
    SaliencyMap map = cfg.external_map
                          ? load_external_map(*cfg.external_map, Shape{frozen.shape()[1], frozen.shape()[2]})
                          : detect_spectral_residual(frozen);

    std::vector<CropBox> boxes;
    if (!map.degenerate) {
        Mask mask = threshold_mask(map, cfg.mask_k);
        const int target = enc.config().input_shape[1];
        SaliencyParts geometry = extract_parts(frozen, mask, cfg.pad, target);
        boxes = geometry.boxes;
    }

    if (boxes.empty()) {
        // no usable region: global-only step, flagged
        local.degenerate = true;
        total = l_g;
        local.L = double(total.item());
        if (breakdown) *breakdown = local;
        return total;
    }

    SaliencyParts taped;
    taped.boxes = boxes;
    const int target = enc.config().input_shape[1];
    for (const auto& box : boxes) {
        taped.crops.push_back(crop_resize(x0, box, target, target));
    }
    Tensor l_s = saliency_loss(emb_c, enc.embed_parts(taped), cfg.lambda, cfg.distance_form);
    local.L_s = double(l_s.item());

    total = combined_loss(l_s, l_g, cfg.alpha);
    local.L = double(total.item());
    if (breakdown) *breakdown = local;
    return total;
}

OptimizeResult optimize_latent(const Tensor& x_T, const Condition& c, const Denoiser& d,
                               const JointEncoder& enc, const GuidanceConfig& cfg,
                               GuidanceMethod method) {
    if (x_T.shape() != d.config().latent_shape) {
        throw dim_error("optimize_latent: latent " + shape_str(x_T.shape()) + ", denoiser expects " +
                        shape_str(d.config().latent_shape));
    }
    if (cfg.opt_steps < 0) throw contract_error("optimize_latent: negative step count");
    if (cfg.step_size <= 0.0) throw contract_error("optimize_latent: step size must be positive");
    if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) {
        throw contract_error("optimize_latent: momentum must lie in [0,1)");
    }
    if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) {
        throw contract_error("optimize_latent: alpha must lie in [0,1]");
    }

    const NoiseSchedule schedule = make_schedule(cfg.T);
    const Embedding emb_c = enc.embed_condition(c);
    const std::size_t n = x_T.numel();
    const double shell = std::sqrt(double(n));

    OptimizeResult result;
    Tensor x = x_T.detach();
    std::vector<double> velocity(n, 0.0);

    for (int step = 0; step <= cfg.opt_steps; ++step) {
        LossBreakdown breakdown;
        StepRecord rec;
        rec.step = step;
        rec.latent_norm = vec_norm(x.data());

        if (step == cfg.opt_steps) {
            // final forward-only evaluation
            GenerateResult gen = generate(x, c, d, schedule, cfg.p);
            guided_loss(gen.x0, emb_c, enc, cfg, method, &breakdown);
            rec.loss = breakdown.L;
            rec.loss_s = breakdown.L_s;
            rec.loss_g = breakdown.L_g;
            rec.degenerate = breakdown.degenerate;
            result.trace.records.push_back(rec);
            result.trace.final_image = gen.x0;
            if (step == 0) result.trace.initial_image = gen.x0;
            break;
        }

        GradResult grad;
        try {
            grad = grad_wrt_latent(
                x, c,
                [&](const Tensor& x0) { return guided_loss(x0, emb_c, enc, cfg, method, &breakdown); },
                d, schedule, cfg.p);
        } catch (const numeric_error& e) {
            result.trace.aborted = true;
            result.trace.abort_reason = e.what();
            break;
        }

        rec.loss = breakdown.L;
        rec.loss_s = breakdown.L_s;
        rec.loss_g = breakdown.L_g;
        rec.degenerate = breakdown.degenerate;
        rec.grad_norm = vec_norm(grad.grad.data());
        result.trace.records.push_back(rec);
        if (step == 0) result.trace.initial_image = grad.x0;

        // momentum step on the (optionally unit-normalized) gradient
        auto gd = grad.grad.data();
        const double gnorm = rec.grad_norm;
        const double gscale = cfg.normalize_grad ? 1.0 / std::max(gnorm, 1e-12) : 1.0;
        Tensor next = x.detach();
        auto xd = next.mutable_data();
        for (std::size_t i = 0; i < n; ++i) {
            velocity[i] = cfg.momentum * velocity[i] + double(gd[i]) * gscale;
            xd[i] = static_cast<real>(double(xd[i]) - cfg.step_size * velocity[i]);
        }
        if (cfg.renorm) {
            const double norm = vec_norm(next.data());
            if (norm > 0.0) {
                const real scale = static_cast<real>(shell / norm);
                for (auto& v : xd) v *= scale;
            }
        }
        x = next;
    }

    result.latent = x;
    return result;
}

void write_trace_csv(const std::filesystem::path& path, const OptimizationTrace& trace) {
    std::ofstream out(path);
    if (!out) throw io_error("cannot open for writing: " + path.string());
    out << "step,L,L_s,L_g,latent_norm,grad_norm,degenerate_flag\n";
    char line[256];
    for (const auto& r : trace.records) {
        std::snprintf(line, sizeof(line), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", r.step, r.loss,
                      r.loss_s, r.loss_g, r.latent_norm, r.grad_norm, r.degenerate ? 1 : 0);
        out << line;
    }
    if (!out) throw io_error("write failed: " + path.string());
}

}  // namespace sgool
