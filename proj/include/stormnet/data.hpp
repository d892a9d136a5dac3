#pragma once

#include "stormnet/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace stormnet {

enum class EventKind : std::uint8_t { TropicalCyclone = 0, AtmosphericRiver = 1, WeatherFront = 2 };

const char* event_name(EventKind kind);
EventKind event_from_name(const std::string& name); // "tc" | "ar" | "wf"

// Patch dims (p, m, n) for the event: TC 8x32x32, AR 2x148x224, WF 3x27x60.
std::array<std::size_t, 3> event_patch_dims(EventKind kind);
std::vector<std::string> event_channel_names(EventKind kind);

struct ChannelMeta {
    std::string name;
    std::string units;
};

// Co-registered named 2-D variable grids, all H x W.
struct FieldStack {
    std::vector<ChannelMeta> channels;
    Tensor grids; // (C, H, W)

    std::size_t channel_count() const { return channels.size(); }
    std::size_t height() const { return grids.extent(1); }
    std::size_t width() const { return grids.extent(2); }
};

struct GridPoint {
    std::size_t row = 0;
    std::size_t col = 0;
};

struct BoundingBox {
    std::size_t center_row = 0;
    std::size_t center_col = 0;
    std::size_t height = 0;
    std::size_t width = 0;
};

struct PatchRecord {
    bool positive = false;
    Tensor patch; // (p, m, n)
    // "src=<id>;box=<top>,<left>,<h>,<w>;off=<drow>,<dcol>" where off is the
    // centroid offset from the patch center after edge clamping.
    std::string provenance;
};

std::uint64_t provenance_source_id(const std::string& provenance);

struct ChannelStats {
    double mean = 0.0;
    double std = 1.0; // 0 flags a constant channel (mapped to 0 on apply)
};

struct PatchDataset {
    EventKind kind = EventKind::TropicalCyclone;
    std::vector<std::string> channel_names;
    std::array<std::size_t, 3> dims{0, 0, 0}; // p, m, n
    std::vector<ChannelStats> stats;          // raw -> stored transform; identity if raw
    std::vector<PatchRecord> records;

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
};

// Recenters the box on the centroid, shifts (never shrinks) it back inside the
// grid, then crops and stacks all channels in the stack's channel order.
PatchRecord extract_patch(const FieldStack& stack, const BoundingBox& box, GridPoint centroid,
                          bool positive, std::uint64_t source_id);

// Per-channel z-score fitted on `ds` itself; returns the transformed dataset
// with its stats updated to map raw values to stored values.
PatchDataset normalize(PatchDataset ds);
// Applies frozen stats (from the training split) to another dataset.
PatchDataset apply_stats(PatchDataset ds, const std::vector<ChannelStats>& stats);

// One synthetic field with ground-truth centroid. Positive fields carry the
// event signature (pressure well + vortex / moisture corridor / front band);
// negatives carry background or a decoy structure.
std::pair<FieldStack, GridPoint> synth_event_field(EventKind kind, bool positive, Rng& rng);

// n_pos positives then n_neg negatives, patches at the event's canonical dims.
// Record i is generated from rng.split(i), so chunked generation matches
// serial generation.
PatchDataset build_synthetic_dataset(EventKind kind, std::size_t n_pos, std::size_t n_neg, const Rng& rng);

struct SplitResult {
    PatchDataset train;
    PatchDataset val;
    PatchDataset test;
};

// Stratified by label with a seeded shuffle; fractions must sum to 1.
SplitResult split(const PatchDataset& ds, std::array<double, 3> fractions, Rng& rng);

// "CPDS" container, little-endian throughout. Round-trips bit-identically.
void write_dataset(const PatchDataset& ds, const std::string& path);
PatchDataset read_dataset(const std::string& path);
std::vector<std::uint8_t> dataset_to_bytes(const PatchDataset& ds);
PatchDataset dataset_from_bytes(const std::vector<std::uint8_t>& bytes);

// Single-channel patch export as binary P6 PPM, min-max scaled to 8 bits.
void write_patch_ppm(const PatchDataset& ds, std::size_t index, const std::string& channel,
                     const std::string& path);

} // namespace stormnet
