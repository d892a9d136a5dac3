#include "stormnet/data.hpp"

#include "stormnet/detail/bytes.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace stormnet {

namespace {

constexpr double kPi = std::numbers::pi;

struct EventInfo {
    const char* name;
    std::array<std::size_t, 3> patch_dims; // p, m, n
    std::array<std::size_t, 2> grid_dims;  // H, W
    std::vector<ChannelMeta> channels;
};

const EventInfo& event_info(EventKind kind) {
    static const EventInfo tc{
        "tc",
        {8, 32, 32},
        {64, 64},
        {{"PSL", "hPa"},
         {"VBOT", "m/s"},
         {"UBOT", "m/s"},
         {"T200", "K"},
         {"T500", "K"},
         {"TMQ", "kg/m2"},
         {"V850", "m/s"},
         {"U850", "m/s"}},
    };
    static const EventInfo ar{
        "ar",
        {2, 148, 224},
        {192, 288},
        {{"TMQ", "kg/m2"}, {"LANDMASK", "0/1"}},
    };
    static const EventInfo wf{
        "wf",
        {3, 27, 60},
        {48, 96},
        {{"T2M", "K"}, {"PRECIP", "mm/day"}, {"SLP", "hPa"}},
    };
    switch (kind) {
        case EventKind::TropicalCyclone: return tc;
        case EventKind::AtmosphericRiver: return ar;
        case EventKind::WeatherFront: return wf;
    }
    throw ValidationError("unknown event kind");
}

} // namespace

const char* event_name(EventKind kind) {
    return event_info(kind).name;
}

EventKind event_from_name(const std::string& name) {
    if (name == "tc") return EventKind::TropicalCyclone;
    if (name == "ar") return EventKind::AtmosphericRiver;
    if (name == "wf") return EventKind::WeatherFront;
    throw ValidationError("unknown event \"" + name + "\" (expected tc, ar or wf)");
}

std::array<std::size_t, 3> event_patch_dims(EventKind kind) {
    return event_info(kind).patch_dims;
}

std::vector<std::string> event_channel_names(EventKind kind) {
    std::vector<std::string> names;
    for (const ChannelMeta& c : event_info(kind).channels) names.push_back(c.name);
    return names;
}

std::uint64_t provenance_source_id(const std::string& provenance) {
    if (provenance.rfind("src=", 0) != 0) throw ValidationError("provenance missing src= prefix");
    return std::stoull(provenance.substr(4));
}

// ---------------------------------------------------------------------------
// Patch extraction

PatchRecord extract_patch(const FieldStack& stack, const BoundingBox& box, GridPoint centroid,
                          bool positive, std::uint64_t source_id) {
    const std::size_t h = stack.height(), w = stack.width();
    if (box.height == 0 || box.width == 0) throw ValidationError("bounding box extents must be >= 1");
    if (box.height > h || box.width > w) {
        throw ValidationError("bounding box " + std::to_string(box.height) + "x" + std::to_string(box.width) +
                              " larger than grid " + std::to_string(h) + "x" + std::to_string(w));
    }
    if (centroid.row >= h || centroid.col >= w) throw ValidationError("centroid outside grid");

    const std::size_t cy = box.height / 2, cx = box.width / 2;
    // recenter on the centroid, then shift back inside the grid
    std::ptrdiff_t top = static_cast<std::ptrdiff_t>(centroid.row) - static_cast<std::ptrdiff_t>(cy);
    std::ptrdiff_t left = static_cast<std::ptrdiff_t>(centroid.col) - static_cast<std::ptrdiff_t>(cx);
    top = std::clamp<std::ptrdiff_t>(top, 0, static_cast<std::ptrdiff_t>(h - box.height));
    left = std::clamp<std::ptrdiff_t>(left, 0, static_cast<std::ptrdiff_t>(w - box.width));

    const std::size_t p = stack.channel_count();
    Tensor patch({p, box.height, box.width});
    for (std::size_t c = 0; c < p; ++c) {
        for (std::size_t y = 0; y < box.height; ++y) {
            const double* src = stack.grids.data() + (c * h + top + y) * w + left;
            double* dst = patch.data() + (c * box.height + y) * box.width;
            std::copy(src, src + box.width, dst);
        }
    }

    const std::ptrdiff_t off_r = static_cast<std::ptrdiff_t>(centroid.row) - (top + static_cast<std::ptrdiff_t>(cy));
    const std::ptrdiff_t off_c = static_cast<std::ptrdiff_t>(centroid.col) - (left + static_cast<std::ptrdiff_t>(cx));
    std::ostringstream prov;
    prov << "src=" << source_id << ";box=" << top << "," << left << "," << box.height << "," << box.width
         << ";off=" << off_r << "," << off_c;
    return PatchRecord{positive, std::move(patch), prov.str()};
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

std::vector<ChannelStats> fit_stats(const PatchDataset& ds) {
    const std::size_t p = ds.dims[0], per = ds.dims[1] * ds.dims[2];
    std::vector<ChannelStats> stats(p);
    for (std::size_t c = 0; c < p; ++c) {
        double sum = 0.0;
        for (const PatchRecord& r : ds.records) {
            const double* v = r.patch.data() + c * per;
            for (std::size_t i = 0; i < per; ++i) sum += v[i];
        }
        const double n = static_cast<double>(per * ds.records.size());
        const double mean = sum / n;
        double ss = 0.0;
        for (const PatchRecord& r : ds.records) {
            const double* v = r.patch.data() + c * per;
            for (std::size_t i = 0; i < per; ++i) {
                const double d = v[i] - mean;
                ss += d * d;
            }
        }
        const double sd = std::sqrt(ss / n);
        stats[c].mean = mean;
        stats[c].std = sd > 0.0 ? sd : 0.0;
    }
    return stats;
}

void transform_in_place(PatchDataset& ds, const std::vector<ChannelStats>& stats) {
    const std::size_t p = ds.dims[0], per = ds.dims[1] * ds.dims[2];
    for (PatchRecord& r : ds.records) {
        for (std::size_t c = 0; c < p; ++c) {
            double* v = r.patch.data() + c * per;
            if (stats[c].std == 0.0) {
                for (std::size_t i = 0; i < per; ++i) v[i] = 0.0;
            } else {
                const double mu = stats[c].mean, inv = 1.0 / stats[c].std;
                for (std::size_t i = 0; i < per; ++i) v[i] = (v[i] - mu) * inv;
            }
        }
    }
}

// Composition so ds.stats always maps raw values to stored values.
std::vector<ChannelStats> compose_stats(const std::vector<ChannelStats>& old_stats,
                                        const std::vector<ChannelStats>& applied) {
    std::vector<ChannelStats> out(old_stats.size());
    for (std::size_t c = 0; c < old_stats.size(); ++c) {
        out[c].mean = old_stats[c].mean + old_stats[c].std * applied[c].mean;
        out[c].std = old_stats[c].std * applied[c].std;
    }
    return out;
}

} // namespace

PatchDataset normalize(PatchDataset ds) {
    if (ds.empty()) throw ValidationError("normalize: empty dataset");
    const std::vector<ChannelStats> fitted = fit_stats(ds);
    transform_in_place(ds, fitted);
    ds.stats = compose_stats(ds.stats, fitted);
    return ds;
}

PatchDataset apply_stats(PatchDataset ds, const std::vector<ChannelStats>& stats) {
    if (stats.size() != ds.dims[0]) throw ValidationError("apply_stats: stats count != channel count");
    transform_in_place(ds, stats);
    ds.stats = compose_stats(ds.stats, stats);
    return ds;
}

// ---------------------------------------------------------------------------
// Synthetic generators

namespace {

// Sum of a few random low-frequency cosine modes; the large-scale "weather".
void add_smooth_noise(Tensor& grids, std::size_t c, Rng& rng, double amp, int modes = 6) {
    const std::size_t h = grids.extent(1), w = grids.extent(2);
    for (int k = 0; k < modes; ++k) {
        const double fy = rng.uniform(0.4, 2.8) * (rng.next_double() < 0.5 ? -1.0 : 1.0);
        const double fx = rng.uniform(0.4, 2.8);
        const double phase = rng.uniform(0.0, 2.0 * kPi);
        const double a = amp * rng.uniform(0.6, 1.4) / std::sqrt(static_cast<double>(modes));
        for (std::size_t y = 0; y < h; ++y) {
            const double ty = fy * static_cast<double>(y) / static_cast<double>(h);
            for (std::size_t x = 0; x < w; ++x) {
                grids.at3(c, y, x) +=
                    a * std::cos(2.0 * kPi * (ty + fx * static_cast<double>(x) / static_cast<double>(w)) + phase);
            }
        }
    }
}

void add_white_noise(Tensor& grids, std::size_t c, Rng& rng, double amp) {
    const std::size_t n = grids.extent(1) * grids.extent(2);
    double* v = grids.data() + c * n;
    for (std::size_t i = 0; i < n; ++i) v[i] += amp * (2.0 * rng.next_double() - 1.0);
}

void add_gaussian_bump(Tensor& grids, std::size_t c, double cy, double cx, double amp, double sigma_r,
                       double sigma_c) {
    const std::size_t h = grids.extent(1), w = grids.extent(2);
    for (std::size_t y = 0; y < h; ++y) {
        const double dy = (static_cast<double>(y) - cy) / sigma_r;
        for (std::size_t x = 0; x < w; ++x) {
            const double dx = (static_cast<double>(x) - cx) / sigma_c;
            grids.at3(c, y, x) += amp * std::exp(-0.5 * (dy * dy + dx * dx));
        }
    }
}

// Tangential wind field around (cy,cx): v_t(r) = vmax * (r/R) * exp((1-(r/R)^2)/2),
// peaking at r = R. sign +1 is cyclonic in the (u=col, v=row) convention.
void add_vortex(Tensor& grids, std::size_t u_chan, std::size_t v_chan, double cy, double cx, double vmax,
                double radius, double sign) {
    const std::size_t h = grids.extent(1), w = grids.extent(2);
    for (std::size_t y = 0; y < h; ++y) {
        const double dy = static_cast<double>(y) - cy;
        for (std::size_t x = 0; x < w; ++x) {
            const double dx = static_cast<double>(x) - cx;
            const double r = std::hypot(dy, dx);
            if (r < 1e-9) continue;
            const double rr = r / radius;
            const double vt = sign * vmax * rr * std::exp(0.5 * (1.0 - rr * rr));
            grids.at3(u_chan, y, x) += -dy / r * vt;
            grids.at3(v_chan, y, x) += dx / r * vt;
        }
    }
}

FieldStack make_stack(EventKind kind) {
    const EventInfo& info = event_info(kind);
    FieldStack stack;
    stack.channels = info.channels;
    stack.grids = Tensor::zeros({info.channels.size(), info.grid_dims[0], info.grid_dims[1]});
    return stack;
}

GridPoint random_centroid(Rng& rng, std::size_t h, std::size_t w, std::size_t margin_r, std::size_t margin_c) {
    return {margin_r + rng.below(h - 2 * margin_r), margin_c + rng.below(w - 2 * margin_c)};
}

// TC channels: 0 PSL, 1 VBOT, 2 UBOT, 3 T200, 4 T500, 5 TMQ, 6 V850, 7 U850
std::pair<FieldStack, GridPoint> synth_tc(bool positive, Rng& rng) {
    FieldStack stack = make_stack(EventKind::TropicalCyclone);
    Tensor& g = stack.grids;
    const double bg_amp[8] = {1.2, 0.8, 0.8, 0.8, 0.8, 0.7, 0.7, 0.7};
    for (std::size_t c = 0; c < 8; ++c) {
        // label-independent synoptic offset so plain channel means carry little signal
        const double dc = rng.uniform(-0.8, 0.8);
        const std::size_t n = 64 * 64;
        for (std::size_t i = 0; i < n; ++i) g[c * n + i] += dc;
        add_smooth_noise(g, c, rng, bg_amp[c]);
        add_white_noise(g, c, rng, 0.25);
    }
    const GridPoint centroid = random_centroid(rng, 64, 64, 12, 12);
    const double cy = static_cast<double>(centroid.row), cx = static_cast<double>(centroid.col);

    if (positive) {
        const double depth = rng.uniform(3.5, 9.0);
        const double radius = rng.uniform(3.5, 7.0);
        add_gaussian_bump(g, 0, cy, cx, -depth, radius, radius); // low-pressure well
        const double vmax = depth * rng.uniform(0.28, 0.45);
        add_vortex(g, 2, 1, cy, cx, vmax, radius, 1.0);          // UBOT/VBOT
        add_vortex(g, 7, 6, cy, cx, 0.55 * vmax, radius, 1.0);   // U850/U850
        const double warm = rng.uniform(1.2, 3.6);               // upper-level warm core
        add_gaussian_bump(g, 3, cy, cx, warm, 1.3 * radius, 1.3 * radius);
        add_gaussian_bump(g, 4, cy, cx, 0.55 * warm, 1.3 * radius, 1.3 * radius);
        add_gaussian_bump(g, 5, cy, cx, rng.uniform(1.2, 3.0), 1.2 * radius, 1.2 * radius);
    } else {
        const double mode = rng.next_double();
        if (mode < 0.40) {
            // background only
        } else if (mode < 0.80) {
            // weak system: off-center shallow depression with a faint warm/moist
            // anomaly but no organized vortex (the classic near-miss)
            const double dist = rng.uniform(9.0, 18.0);
            const double angle = rng.uniform(0.0, 2.0 * kPi);
            const double dy = cy + dist * std::sin(angle), dx = cx + dist * std::cos(angle);
            const double radius = rng.uniform(3.0, 8.0);
            add_gaussian_bump(g, 0, dy, dx, -rng.uniform(1.5, 4.5), radius, rng.uniform(3.0, 8.0));
            add_gaussian_bump(g, 3, dy, dx, rng.uniform(0.3, 1.6), 1.3 * radius, 1.3 * radius);
            add_gaussian_bump(g, 4, dy, dx, rng.uniform(0.2, 0.9), 1.3 * radius, 1.3 * radius);
            add_gaussian_bump(g, 5, dy, dx, rng.uniform(0.3, 1.4), 1.2 * radius, 1.2 * radius);
            const double shear_u = rng.uniform(-0.04, 0.04), shear_v = rng.uniform(-0.04, 0.04);
            for (std::size_t y = 0; y < 64; ++y) {
                for (std::size_t x = 0; x < 64; ++x) {
                    g.at3(2, y, x) += shear_u * (static_cast<double>(y) - 32.0);
                    g.at3(1, y, x) += shear_v * (static_cast<double>(x) - 32.0);
                }
            }
        } else {
            // anticyclone: pressure bump with reversed rotation, mild warmth aloft
            const double depth = rng.uniform(3.0, 7.0);
            const double radius = rng.uniform(4.0, 8.0);
            add_gaussian_bump(g, 0, cy, cx, depth, radius, radius);
            add_vortex(g, 2, 1, cy, cx, depth * rng.uniform(0.2, 0.35), radius, -1.0);
            add_gaussian_bump(g, 3, cy, cx, rng.uniform(0.0, 1.2), 1.5 * radius, 1.5 * radius);
        }
    }
    return {std::move(stack), centroid};
}

// AR channels: 0 TMQ, 1 LANDMASK
std::pair<FieldStack, GridPoint> synth_ar(bool positive, Rng& rng) {
    FieldStack stack = make_stack(EventKind::AtmosphericRiver);
    Tensor& g = stack.grids;
    const std::size_t h = 192, w = 288;
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) g.at3(0, y, x) = 2.5;
    }
    add_smooth_noise(g, 0, rng, 0.8);
    add_white_noise(g, 0, rng, 0.2);
    // coastline: thresholded smooth field, uncorrelated with the label
    add_smooth_noise(g, 1, rng, 1.0, 4);
    for (std::size_t i = 0; i < h * w; ++i) {
        double& v = g[h * w + i];
        v = v > 0.0 ? 1.0 : 0.0;
    }

    if (positive) {
        // narrow moisture corridor, within +-40 deg of meridional
        const double theta = rng.uniform(-40.0, 40.0) * kPi / 180.0;
        const double cy = static_cast<double>(h) / 2.0 + rng.uniform(-10.0, 10.0);
        const double cx = rng.uniform(0.3 * w, 0.7 * w);
        const double amp_sin = rng.uniform(0.0, 14.0);
        const double wavelen = rng.uniform(100.0, 220.0);
        const double phase = rng.uniform(0.0, 2.0 * kPi);
        const double width = rng.uniform(5.0, 11.0);
        const double moist = rng.uniform(2.2, 4.5);
        const double ct = std::cos(theta), tt = std::tan(theta);
        std::vector<double> line(h);
        for (std::size_t y = 0; y < h; ++y) {
            const double dy = static_cast<double>(y) - cy;
            line[y] = cx + tt * dy + amp_sin * std::sin(2.0 * kPi * dy / wavelen + phase);
        }
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double d = (static_cast<double>(x) - line[y]) * ct;
                g.at3(0, y, x) += moist * std::exp(-0.5 * d * d / (width * width));
            }
        }
        const std::size_t crow = static_cast<std::size_t>(std::llround(cy));
        const double lc = std::clamp(line[crow], 0.0, static_cast<double>(w - 1));
        return {std::move(stack), GridPoint{crow, static_cast<std::size_t>(std::llround(lc))}};
    }

    GridPoint centroid{70 + rng.below(52), 108 + rng.below(72)};
    if (rng.next_double() < 0.5) {
        // moisture blob of comparable amplitude but no elongation
        const double rr = rng.uniform(14.0, 26.0);
        const double rc = rr * rng.uniform(0.8, 1.25);
        add_gaussian_bump(g, 0, static_cast<double>(centroid.row), static_cast<double>(centroid.col),
                          rng.uniform(2.2, 4.5), rr, rc);
    }
    return {std::move(stack), centroid};
}

// WF channels: 0 T2M, 1 PRECIP, 2 SLP
std::pair<FieldStack, GridPoint> synth_wf(bool positive, Rng& rng) {
    FieldStack stack = make_stack(EventKind::WeatherFront);
    Tensor& g = stack.grids;
    const std::size_t h = 48, w = 96;
    for (std::size_t c = 0; c < 3; ++c) {
        const double dc = rng.uniform(-0.8, 0.8);
        for (std::size_t i = 0; i < h * w; ++i) g[c * h * w + i] += dc;
    }
    add_smooth_noise(g, 0, rng, 1.0, 5);
    add_white_noise(g, 0, rng, 0.2);
    add_smooth_noise(g, 1, rng, 0.35, 4);
    add_white_noise(g, 1, rng, 0.15);
    add_smooth_noise(g, 2, rng, 1.0, 5);
    add_white_noise(g, 2, rng, 0.2);

    GridPoint centroid;
    if (positive) {
        // temperature step across a gently curved near-horizontal line,
        // with a collocated precipitation strip
        const double alpha = rng.uniform(-25.0, 25.0) * kPi / 180.0;
        const double r0 = static_cast<double>(h) / 2.0 + rng.uniform(-6.0, 6.0);
        const double cx = static_cast<double>(w) / 2.0;
        const double amp_sin = rng.uniform(0.0, 2.5);
        const double wavelen = rng.uniform(40.0, 90.0);
        const double phase = rng.uniform(0.0, 2.0 * kPi);
        const double grad = rng.uniform(2.2, 4.2) * (rng.next_double() < 0.5 ? 1.0 : -1.0);
        const double wt = rng.uniform(1.6, 3.2);
        const double pamp = rng.uniform(2.5, 5.5);
        const double wp = rng.uniform(1.4, 2.8);
        const double trough = rng.uniform(0.8, 2.0);
        const double mod_len = rng.uniform(25.0, 60.0);
        const double mod_phase = rng.uniform(0.0, 2.0 * kPi);
        const double ta = std::tan(alpha);
        std::vector<double> line(w), mod(w);
        for (std::size_t x = 0; x < w; ++x) {
            const double dx = static_cast<double>(x) - cx;
            line[x] = r0 + ta * dx + amp_sin * std::sin(2.0 * kPi * dx / wavelen + phase);
            mod[x] = 0.55 + 0.45 * std::sin(2.0 * kPi * dx / mod_len + mod_phase);
        }
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double d = static_cast<double>(y) - line[x];
                g.at3(0, y, x) += -grad * std::tanh(d / wt);
                g.at3(1, y, x) += pamp * mod[x] * std::exp(-0.5 * d * d / (wp * wp));
                g.at3(2, y, x) += -trough * std::exp(-0.5 * d * d / (6.25 * wp * wp));
            }
        }
        const double cr = std::clamp(line[static_cast<std::size_t>(cx)], 0.0, static_cast<double>(h - 1));
        centroid = {static_cast<std::size_t>(std::llround(cr)), static_cast<std::size_t>(cx)};
    } else {
        // broad smooth temperature transition of comparable amplitude (no sharp
        // band), precipitation speckle uncorrelated with temperature
        const double alpha = rng.uniform(-25.0, 25.0) * kPi / 180.0;
        const double r0 = static_cast<double>(h) / 2.0 + rng.uniform(-8.0, 8.0);
        const double cx = static_cast<double>(w) / 2.0;
        const double grad = rng.uniform(1.2, 4.2) * (rng.next_double() < 0.5 ? 1.0 : -1.0);
        const double wt = rng.uniform(7.0, 15.0); // several times wider than a front
        const double ta = std::tan(alpha);
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double d = static_cast<double>(y) - (r0 + ta * (static_cast<double>(x) - cx));
                g.at3(0, y, x) += -grad * std::tanh(d / wt);
            }
        }
        const std::size_t blobs = 3 + rng.below(7);
        for (std::size_t b = 0; b < blobs; ++b) {
            add_gaussian_bump(g, 1, rng.uniform(2.0, 46.0), rng.uniform(2.0, 94.0), rng.uniform(1.5, 5.0),
                              rng.uniform(1.3, 4.5), rng.uniform(1.3, 4.5));
        }
        // a stray pressure ridge or trough, not tied to the temperature field
        add_gaussian_bump(g, 2, rng.uniform(4.0, 44.0), rng.uniform(4.0, 92.0), rng.uniform(-1.8, 1.8),
                          rng.uniform(3.0, 10.0), rng.uniform(6.0, 20.0));
        centroid = random_centroid(rng, h, w, 11, 26);
    }
    // precipitation cannot be negative
    for (std::size_t i = h * w; i < 2 * h * w; ++i) g[i] = std::max(0.0, g[i]);
    return {std::move(stack), centroid};
}

} // namespace

std::pair<FieldStack, GridPoint> synth_event_field(EventKind kind, bool positive, Rng& rng) {
    switch (kind) {
        case EventKind::TropicalCyclone: return synth_tc(positive, rng);
        case EventKind::AtmosphericRiver: return synth_ar(positive, rng);
        case EventKind::WeatherFront: return synth_wf(positive, rng);
    }
    throw ValidationError("unknown event kind");
}

PatchDataset build_synthetic_dataset(EventKind kind, std::size_t n_pos, std::size_t n_neg, const Rng& rng) {
    if (n_pos == 0 || n_neg == 0) throw ValidationError("need at least one record per class");
    const EventInfo& info = event_info(kind);
    PatchDataset ds;
    ds.kind = kind;
    ds.channel_names = event_channel_names(kind);
    ds.dims = info.patch_dims;
    ds.stats.assign(info.patch_dims[0], ChannelStats{0.0, 1.0});
    ds.records.reserve(n_pos + n_neg);

    const BoundingBox box{0, 0, info.patch_dims[1], info.patch_dims[2]};
    for (std::size_t i = 0; i < n_pos + n_neg; ++i) {
        const bool positive = i < n_pos;
        Rng record_rng = rng.split(i);
        auto [stack, centroid] = synth_event_field(kind, positive, record_rng);
        ds.records.push_back(extract_patch(stack, box, centroid, positive, i));
    }
    return ds;
}

SplitResult split(const PatchDataset& ds, std::array<double, 3> fractions, Rng& rng) {
    double sum = 0.0;
    for (double f : fractions) {
        if (f <= 0.0) throw ValidationError("split fractions must be positive");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");
    if (ds.empty()) throw ValidationError("split: empty dataset");

    std::vector<std::size_t> by_label[2]; // [0] positives, [1] negatives
    for (std::size_t i = 0; i < ds.records.size(); ++i) by_label[ds.records[i].positive ? 0 : 1].push_back(i);
    for (auto& idx : by_label) {
        for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    }

    SplitResult out;
    PatchDataset* parts[3] = {&out.train, &out.val, &out.test};
    for (PatchDataset* part : parts) {
        part->kind = ds.kind;
        part->channel_names = ds.channel_names;
        part->dims = ds.dims;
        part->stats = ds.stats;
    }
    for (const auto& idx : by_label) {
        const std::size_t n = idx.size();
        std::size_t counts[3];
        for (int s = 0; s < 3; ++s) counts[s] = static_cast<std::size_t>(fractions[s] * static_cast<double>(n));
        std::size_t rem = n - counts[0] - counts[1] - counts[2];
        for (int s = 0; rem > 0; s = (s + 1) % 3, --rem) ++counts[s];
        std::size_t pos = 0;
        for (int s = 0; s < 3; ++s) {
            for (std::size_t i = 0; i < counts[s]; ++i) parts[s]->records.push_back(ds.records[idx[pos++]]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// CPDS container

namespace {

using detail::ByteReader;
using detail::put_f64;
using detail::put_string;
using detail::put_u32;
using detail::put_u8;

constexpr std::uint32_t kDatasetVersion = 1;
constexpr std::size_t kMaxExtent = 1u << 20;
constexpr std::size_t kMaxElements = 1ull << 30;

} // namespace

std::vector<std::uint8_t> dataset_to_bytes(const PatchDataset& ds) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'C', 'P', 'D', 'S'});
    put_u32(out, kDatasetVersion);
    put_u8(out, static_cast<std::uint8_t>(ds.kind));
    put_u32(out, static_cast<std::uint32_t>(ds.dims[0]));
    put_u32(out, static_cast<std::uint32_t>(ds.dims[1]));
    put_u32(out, static_cast<std::uint32_t>(ds.dims[2]));
    put_u32(out, static_cast<std::uint32_t>(ds.records.size()));
    for (const std::string& name : ds.channel_names) put_string(out, name);
    for (const ChannelStats& s : ds.stats) {
        put_f64(out, s.mean);
        put_f64(out, s.std);
    }
    const std::size_t per = ds.dims[0] * ds.dims[1] * ds.dims[2];
    for (const PatchRecord& r : ds.records) {
        put_u8(out, r.positive ? 1 : 0);
        put_string(out, r.provenance);
        for (std::size_t i = 0; i < per; ++i) put_f64(out, r.patch[i]);
    }
    return out;
}

PatchDataset dataset_from_bytes(const std::vector<std::uint8_t>& bytes) {
    ByteReader in(bytes.data(), bytes.size());
    in.need(4, "magic");
    if (!(bytes[0] == 'C' && bytes[1] == 'P' && bytes[2] == 'D' && bytes[3] == 'S')) {
        throw FormatError("bad CPDS magic", 0);
    }
    in.skip(4);
    PatchDataset ds;
    const std::uint32_t version = in.u32("version");
    if (version != kDatasetVersion) throw FormatError("unsupported CPDS version " + std::to_string(version), 4);
    const std::uint8_t kind = in.u8("event kind");
    if (kind > 2) throw FormatError("bad event kind " + std::to_string(kind), in.offset() - 1);
    ds.kind = static_cast<EventKind>(kind);
    ds.dims[0] = in.u32("channel count");
    ds.dims[1] = in.u32("height");
    ds.dims[2] = in.u32("width");
    const std::uint32_t n_records = in.u32("record count");
    for (std::size_t d = 0; d < 3; ++d) {
        if (ds.dims[d] == 0 || ds.dims[d] > kMaxExtent) {
            throw FormatError("dataset dim out of range: " + std::to_string(ds.dims[d]), in.offset());
        }
    }
    const std::size_t per = ds.dims[0] * ds.dims[1] * ds.dims[2];
    if (per > kMaxElements) throw FormatError("dataset dims overflow", in.offset());
    for (std::size_t c = 0; c < ds.dims[0]; ++c) ds.channel_names.push_back(in.string("channel name"));
    for (std::size_t c = 0; c < ds.dims[0]; ++c) {
        ChannelStats s;
        s.mean = in.f64("channel mean");
        s.std = in.f64("channel std");
        ds.stats.push_back(s);
    }
    ds.records.reserve(n_records);
    for (std::uint32_t r = 0; r < n_records; ++r) {
        PatchRecord rec;
        rec.positive = in.u8("record label") == 1;
        rec.provenance = in.string("record provenance");
        rec.patch = Tensor({ds.dims[0], ds.dims[1], ds.dims[2]});
        in.f64_block(rec.patch.data(), per, "record patch data");
        ds.records.push_back(std::move(rec));
    }
    if (in.remaining() != 0) {
        throw FormatError("trailing bytes after last record", in.offset());
    }
    return ds;
}

void write_dataset(const PatchDataset& ds, const std::string& path) {
    const std::vector<std::uint8_t> bytes = dataset_to_bytes(ds);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + path);
}

PatchDataset read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw FormatError("cannot open " + path);
    const std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw FormatError("read failed for " + path);
    return dataset_from_bytes(bytes);
}

void write_patch_ppm(const PatchDataset& ds, std::size_t index, const std::string& channel,
                     const std::string& path) {
    if (index >= ds.records.size()) throw ValidationError("record index out of range");
    std::size_t c = ds.channel_names.size();
    for (std::size_t i = 0; i < ds.channel_names.size(); ++i) {
        if (ds.channel_names[i] == channel) c = i;
    }
    if (c == ds.channel_names.size()) throw ValidationError("unknown channel \"" + channel + "\"");

    const std::size_t m = ds.dims[1], n = ds.dims[2];
    const double* v = ds.records[index].patch.data() + c * m * n;
    double lo = v[0], hi = v[0];
    for (std::size_t i = 0; i < m * n; ++i) {
        lo = std::min(lo, v[i]);
        hi = std::max(hi, v[i]);
    }
    const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path + " for writing");
    out << "P6\n" << n << " " << m << "\n255\n";
    for (std::size_t i = 0; i < m * n; ++i) {
        const auto byte = static_cast<std::uint8_t>(std::lround((v[i] - lo) * scale));
        const char px[3] = {static_cast<char>(byte), static_cast<char>(byte), static_cast<char>(byte)};
        out.write(px, 3);
    }
    if (!out) throw FormatError("write failed for " + path);
}

} // namespace stormnet
