#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tfl/autograd.hpp"

namespace tfl {

enum class Modality : std::uint16_t { visual = 0, audio = 1, fused = 2 };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

// C x T feature matrix for one media item, stored row-major as float32 exactly as it sits
// in a .tfz file. Immutable after construction.
class FeatureSequence {
public:
    // Throws ValidationError on C < 1, T < 2, non-finite values or a non-positive rate.
    FeatureSequence(std::string item_id, Modality modality, float feature_rate, std::size_t channels,
                    std::size_t length, std::vector<float> values);

    const std::string& item_id() const { return item_id_; }
    Modality modality() const { return modality_; }
    float feature_rate() const { return feature_rate_; }
    std::size_t channels() const { return channels_; }
    std::size_t length() const { return length_; }
    double duration() const { return static_cast<double>(length_) / static_cast<double>(feature_rate_); }

    float at(std::size_t channel, std::size_t t) const { return values_[channel * length_ + t]; }
    std::span<const float> values() const { return values_; }
    std::span<const float> channel(std::size_t c) const {
        return std::span<const float>(values_).subspan(c * length_, length_);
    }

    ag::Mat to_matrix() const;

    // Bitwise equality of every field and payload value.
    bool bit_equal(const FeatureSequence& other) const;

private:
    std::string item_id_;
    Modality modality_;
    float feature_rate_;
    std::size_t channels_;
    std::size_t length_;
    std::vector<float> values_;
};

struct Segment {
    double start = 0.0;
    double end = 0.0;
    double length() const { return end - start; }
    bool operator==(const Segment&) const = default;
};

struct SegmentAnnotation {
    std::string item_id;
    double duration = 0.0;
    std::vector<Segment> segments;
    bool is_fake = false;

    // Throws ValidationError when segments are out of range, unsorted, overlapping, or the
    // fake flag disagrees with the segment list.
    void validate() const;
    bool operator==(const SegmentAnnotation&) const = default;
};

struct Prediction {
    double start = 0.0;
    double end = 0.0;
    double score = 0.0;

    void validate() const;
    bool operator==(const Prediction&) const = default;
};

struct ItemPredictions {
    std::string item_id;
    std::vector<Prediction> segments;
};

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestEntry {
    std::string features;  // relative to the manifest's directory unless absolute
    std::size_t annotation_index = 0;
};

struct DatasetManifest {
    Split split = Split::train;
    std::uint64_t corpus_seed = 0;
    std::string annotations;  // annotation file, relative to the manifest's directory
    std::vector<ManifestEntry> entries;
};

// One item ready for training or evaluation.
struct Sample {
    FeatureSequence features;
    SegmentAnnotation annotation;
};

// ---- .tfz feature container ----
// 20-byte little-endian header: magic "TFZ1", u16 version (1), u16 modality, u32 C, u32 T,
// f32 feature_rate; then C*T float32 values row-major. The item id is the file stem.
inline constexpr std::size_t kTfzHeaderBytes = 20;

void save_feature_sequence(const FeatureSequence& seq, const std::filesystem::path& path);
FeatureSequence load_feature_sequence(const std::filesystem::path& path);
FeatureSequence parse_feature_sequence(std::span<const std::uint8_t> bytes, std::string item_id);
std::vector<std::uint8_t> encode_feature_sequence(const FeatureSequence& seq);

// ---- JSON documents ----
void save_annotations(const std::vector<SegmentAnnotation>& annos, const std::filesystem::path& path);
std::vector<SegmentAnnotation> load_annotations(const std::filesystem::path& path);

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
// Checks that every referenced file exists, annotation indices are in range and item ids
// are unique within the split.
DatasetManifest load_manifest(const std::filesystem::path& path);
// Loads and pairs every feature file with its annotation.
std::vector<Sample> load_split(const std::filesystem::path& manifest_path);

void save_prediction_dump(const std::vector<ItemPredictions>& dump, const std::filesystem::path& path);
std::vector<ItemPredictions> load_prediction_dump(const std::filesystem::path& path);
// JSON array of {item_id, segments: [[start, end, score], ...]}.
nlohmann::json prediction_dump_to_json(const std::vector<ItemPredictions>& dump);
std::vector<ItemPredictions> prediction_dump_from_json(const nlohmann::json& doc, const std::string& source);

// ---- transforms ----
// Per-channel endpoint-aligned linear interpolation onto target_length positions; the rate
// scales by target_length / T.
FeatureSequence resample_temporal(const FeatureSequence& seq, std::size_t target_length);

// Channel-wise concatenation, visual channels first. Inputs of different length are both
// resampled to the longer one first.
FeatureSequence fuse_modalities(const FeatureSequence& visual, const FeatureSequence& audio);

}  // namespace tfl
