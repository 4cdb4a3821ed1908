#include "sgool/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <deque>

#include "sgool/image.hpp"
#include "sgool/tensor_io.hpp"

namespace sgool {

namespace {

using cplx = std::complex<double>;

// Naive O(N^2) DFT along one axis. Image sides here are tiny (>= 8, typically
// 16), so this beats pulling in an FFT dependency.
void dft_axis(std::vector<cplx>& grid, int H, int W, bool rows, bool inverse) {
    const int n = rows ? W : H;
    const int lines = rows ? H : W;
    const double sign = inverse ? 2.0 * M_PI : -2.0 * M_PI;
    std::vector<cplx> twiddle(n);
    for (int m = 0; m < n; ++m) {
        twiddle[m] = std::polar(1.0, sign * m / n);
    }
    std::vector<cplx> line(n), out(n);
    for (int l = 0; l < lines; ++l) {
        for (int i = 0; i < n; ++i) {
            line[i] = rows ? grid[std::size_t(l) * W + i] : grid[std::size_t(i) * W + l];
        }
        for (int k = 0; k < n; ++k) {
            cplx acc(0.0, 0.0);
            for (int i = 0; i < n; ++i) acc += line[i] * twiddle[(std::size_t(k) * i) % n];
            out[k] = inverse ? acc / double(n) : acc;
        }
        for (int i = 0; i < n; ++i) {
            (rows ? grid[std::size_t(l) * W + i] : grid[std::size_t(i) * W + l]) = out[i];
        }
    }
}

void dft2(std::vector<cplx>& grid, int H, int W, bool inverse) {
    dft_axis(grid, H, W, /*rows=*/true, inverse);
    dft_axis(grid, H, W, /*rows=*/false, inverse);
}

// circular 3x3 box average
std::vector<double> box3_wrap(const std::vector<double>& v, int H, int W) {
    std::vector<double> out(v.size());
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double s = 0.0;
            for (int dy = -1; dy <= 1; ++dy) {
                const int yy = (y + dy + H) % H;
                for (int dx = -1; dx <= 1; ++dx) {
                    const int xx = (x + dx + W) % W;
                    s += v[std::size_t(yy) * W + xx];
                }
            }
            out[std::size_t(y) * W + x] = s / 9.0;
        }
    }
    return out;
}

// separable circular Gaussian blur
std::vector<double> gaussian_wrap(const std::vector<double>& v, int H, int W, double sigma) {
    if (sigma <= 0.0) return v;
    const int radius = std::max(1, static_cast<int>(std::lround(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double ksum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        ksum += kernel[i + radius];
    }
    for (auto& k : kernel) k /= ksum;

    std::vector<double> tmp(v.size()), out(v.size());
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                s += kernel[i + radius] * v[std::size_t(y) * W + ((x + i + W) % W)];
            }
            tmp[std::size_t(y) * W + x] = s;
        }
    }
    for (int x = 0; x < W; ++x) {
        for (int y = 0; y < H; ++y) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) {
                s += kernel[i + radius] * tmp[std::size_t((y + i + H) % H) * W + x];
            }
            out[std::size_t(y) * W + x] = s;
        }
    }
    return out;
}

SaliencyMap degenerate_map(int H, int W, SaliencySource source) {
    SaliencyMap m;
    m.values = Tensor(Shape{H, W}, real(0));
    m.source = source;
    m.degenerate = true;
    return m;
}

SaliencyMap normalized_map(std::vector<double> raw, int H, int W, SaliencySource source) {
    const auto [lo_it, hi_it] = std::minmax_element(raw.begin(), raw.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi - lo > 1e-12)) return degenerate_map(H, W, source);
    std::vector<real> vals(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        vals[i] = static_cast<real>((raw[i] - lo) / (hi - lo));
    }
    SaliencyMap m;
    m.values = Tensor(Shape{H, W}, std::move(vals));
    m.source = source;
    return m;
}

}  // namespace

SaliencyMap detect_spectral_residual(const Tensor& img) {
    Tensor lum = luminance(img);
    const int H = lum.shape()[0], W = lum.shape()[1];
    if (H < 8 || W < 8) throw contract_error("saliency needs at least an 8x8 image");

    auto ld = lum.data();
    const auto [lo, hi] = std::minmax_element(ld.begin(), ld.end());
    if (!(double(*hi) - double(*lo) > 1e-12)) {
        return degenerate_map(H, W, SaliencySource::spectral_residual);
    }

    std::vector<cplx> grid(ld.size());
    for (std::size_t i = 0; i < ld.size(); ++i) grid[i] = cplx(double(ld[i]), 0.0);
    dft2(grid, H, W, /*inverse=*/false);

    std::vector<double> log_amp(grid.size());
    std::vector<cplx> phase(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double amp = std::abs(grid[i]);
        log_amp[i] = std::log(amp + 1e-12);
        phase[i] = amp > 1e-300 ? grid[i] / amp : cplx(1.0, 0.0);
    }

    const std::vector<double> avg = box3_wrap(log_amp, H, W);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        grid[i] = std::exp(log_amp[i] - avg[i]) * phase[i];
    }
    dft2(grid, H, W, /*inverse=*/true);

    std::vector<double> sal(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) sal[i] = std::norm(grid[i]);
    sal = gaussian_wrap(sal, H, W, double(W) / 16.0);

    return normalized_map(std::move(sal), H, W, SaliencySource::spectral_residual);
}

SaliencyMap load_external_map(const std::filesystem::path& path, const Shape& expected_shape) {
    if (expected_shape.size() != 2) throw contract_error("external saliency maps are rank 2");
    Tensor t = read_tensor(path, expected_shape);
    auto d = t.data();
    std::vector<double> raw(d.begin(), d.end());
    return normalized_map(std::move(raw), expected_shape[0], expected_shape[1],
                          SaliencySource::external);
}

Mask threshold_mask(const SaliencyMap& m, double k) {
    if (m.degenerate) throw no_salient_region("degenerate saliency map has no regions");
    const int H = m.values.shape()[0], W = m.values.shape()[1];
    auto d = m.values.data();

    double mean = 0.0;
    for (real v : d) mean += double(v);
    mean /= double(d.size());
    double var = 0.0;
    for (real v : d) var += (double(v) - mean) * (double(v) - mean);
    var /= double(d.size());
    const double cut = mean + k * std::sqrt(var);

    Mask mask;
    mask.height = H;
    mask.width = W;
    mask.on.assign(d.size(), 0);
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (double(d[i]) > cut) {
            mask.on[i] = 1;
            ++mask.count;
        }
    }
    if (mask.count == 0) {
        // top-decile fallback keeps the mask nonempty however large k gets
        std::vector<real> sorted(d.begin(), d.end());
        const std::size_t q = sorted.size() - std::max<std::size_t>(1, sorted.size() / 10);
        std::nth_element(sorted.begin(), sorted.begin() + q, sorted.end());
        const double qcut = double(sorted[q]);
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (double(d[i]) >= qcut) {
                mask.on[i] = 1;
                ++mask.count;
            }
        }
    }
    if (mask.count == 0) throw no_salient_region("threshold produced an empty mask");
    return mask;
}

namespace {

struct Component {
    int min_y, min_x, max_y, max_x;
    int area;
};

std::vector<Component> label_components(const Mask& mask) {
    const int H = mask.height, W = mask.width;
    std::vector<int> label(std::size_t(H) * W, -1);
    std::vector<Component> comps;
    std::deque<std::pair<int, int>> queue;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            if (!mask.at(y, x) || label[std::size_t(y) * W + x] >= 0) continue;
            const int id = static_cast<int>(comps.size());
            comps.push_back({y, x, y, x, 0});
            label[std::size_t(y) * W + x] = id;
            queue.emplace_back(y, x);
            while (!queue.empty()) {
                auto [cy, cx] = queue.front();
                queue.pop_front();
                Component& comp = comps[id];
                comp.min_y = std::min(comp.min_y, cy);
                comp.max_y = std::max(comp.max_y, cy);
                comp.min_x = std::min(comp.min_x, cx);
                comp.max_x = std::max(comp.max_x, cx);
                ++comp.area;
                const int dys[4] = {-1, 1, 0, 0};
                const int dxs[4] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int ny = cy + dys[k], nx = cx + dxs[k];
                    if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
                    if (!mask.at(ny, nx) || label[std::size_t(ny) * W + nx] >= 0) continue;
                    label[std::size_t(ny) * W + nx] = id;
                    queue.emplace_back(ny, nx);
                }
            }
        }
    }
    return comps;
}

}  // namespace

SaliencyParts extract_parts(const Tensor& img, const Mask& mask, int pad, int target) {
    if (img.rank() != 3) throw dim_error("extract_parts expects a [C,H,W] image");
    const int H = img.shape()[1], W = img.shape()[2];
    if (mask.height != H || mask.width != W) {
        throw dim_error("mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                        " does not match image " + std::to_string(H) + "x" + std::to_string(W));
    }
    if (mask.count == 0) throw contract_error("extract_parts: empty mask");
    if (pad < 0 || target <= 0) throw contract_error("extract_parts: bad pad/target");

    auto comps = label_components(mask);
    const double min_area = 0.01 * double(H) * double(W);

    std::vector<Component> large;
    std::vector<Component> small;
    for (const auto& c : comps) {
        (double(c.area) >= min_area ? large : small).push_back(c);
    }
    // small fragments extend the closest real region; with no real region
    // they are dropped and the caller falls back to global-only guidance
    for (const auto& s : small) {
        if (large.empty()) break;
        const double sy = 0.5 * (s.min_y + s.max_y), sx = 0.5 * (s.min_x + s.max_x);
        std::size_t best = 0;
        double best_d2 = 1e300;
        for (std::size_t i = 0; i < large.size(); ++i) {
            const double ly = 0.5 * (large[i].min_y + large[i].max_y);
            const double lx = 0.5 * (large[i].min_x + large[i].max_x);
            const double d2 = (sy - ly) * (sy - ly) + (sx - lx) * (sx - lx);
            if (d2 < best_d2) {
                best_d2 = d2;
                best = i;
            }
        }
        large[best].min_y = std::min(large[best].min_y, s.min_y);
        large[best].max_y = std::max(large[best].max_y, s.max_y);
        large[best].min_x = std::min(large[best].min_x, s.min_x);
        large[best].max_x = std::max(large[best].max_x, s.max_x);
    }

    SaliencyParts parts;
    parts.mask = mask;
    for (const auto& c : large) {
        CropBox box;
        box.row = std::max(0, c.min_y - pad);
        box.col = std::max(0, c.min_x - pad);
        box.height = std::min(H, c.max_y + pad + 1) - box.row;
        box.width = std::min(W, c.max_x + pad + 1) - box.col;
        parts.boxes.push_back(box);
        parts.crops.push_back(crop_resize(img, box, target, target));
    }
    return parts;
}

Tensor mask_to_tensor(const Mask& m) {
    std::vector<real> vals(m.on.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = m.on[i] ? real(1) : real(0);
    return Tensor(Shape{m.height, m.width}, std::move(vals));
}

}  // namespace sgool
