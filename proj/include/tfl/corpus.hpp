#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "tfl/data_model.hpp"

namespace tfl::corpus {

enum class ForgeryMode { mean_shift, noise_scale, shuffle };

std::string to_string(ForgeryMode m);
ForgeryMode forgery_mode_from_string(const std::string& s);

// AR(1) coefficient of every generated channel.
inline constexpr double kArCoefficient = 0.95;
// Short segments are drawn log-uniform in [0.1, 1) s, the others in [1, 3] s.
inline constexpr double kShortMin = 0.1;
inline constexpr double kShortMax = 1.0;
inline constexpr double kLongMax = 3.0;

struct CorpusConfig {
    int num_items = 500;
    int channels = 32;
    int length_T = 192;
    double feature_rate = 32.0;  // positions per second
    double real_fraction = 0.2;
    int max_segments_per_item = 3;
    double short_fraction = 0.996;
    double shift_magnitude = 1.0;
    std::uint64_t seed = 0;
    ForgeryMode forgery_mode = ForgeryMode::mean_shift;

    // Throws ConfigError for out-of-range fields or infeasible segment placement.
    void validate() const;
    // Uses the float32 rate stored in feature files so planned segments match item durations.
    double duration() const {
        return static_cast<double>(length_T) / static_cast<double>(static_cast<float>(feature_rate));
    }
};

CorpusConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CorpusConfig& cfg);

struct CorpusStats {
    int num_real = 0;
    int num_fake = 0;
    int num_segments = 0;
    int num_short_segments = 0;  // duration < 1 s
};

struct CorpusBuild {
    std::array<DatasetManifest, 3> manifests;  // train, val, test
    CorpusStats stats;
};

std::string item_id(int item_index);

// Per channel x_t = 0.95 x_{t-1} + e_t with unit normal innovations and a stationary start,
// seeded from (cfg.seed, item_index).
FeatureSequence generate_base_sequence(const CorpusConfig& cfg, int item_index);

// Copy of seq where only positions p with start <= p / rate < end differ.
// mean_shift adds magnitude to every channel, noise_scale multiplies the AR innovations by
// (1 + magnitude), shuffle permutes the positions (seeded by shuffle_seed).
FeatureSequence inject_forgery(const FeatureSequence& seq, const Segment& segment, ForgeryMode mode, double magnitude,
                               std::uint64_t shuffle_seed = 0);

// Forged segments planned for one item (empty for real items).
std::vector<Segment> plan_segments(const CorpusConfig& cfg, int item_index);

// Writes features/<item>.tfz, annotations_<split>.json and manifest_<split>.json under out_dir
// with a 70/10/20 split; exactly round(real_fraction * num_items) items are unforged.
CorpusBuild build_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace tfl::corpus
