#include "tfl/data_model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tfl/errors.hpp"
#include "tfl/interp.hpp"

namespace tfl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint8_t kMagic[4] = {'T', 'F', 'Z', '1'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
    return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
    return v;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what(), e.byte);
    }
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

fs::path resolve(const fs::path& base_dir, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base_dir / path;
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ValidationError(where + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError(where + ": field '" + key + "' has the wrong type");
    }
}

}  // namespace

std::string to_string(Modality m) {
    switch (m) {
        case Modality::visual: return "visual";
        case Modality::audio: return "audio";
        case Modality::fused: return "fused";
    }
    return "unknown";
}

Modality modality_from_string(const std::string& s) {
    if (s == "visual") return Modality::visual;
    if (s == "audio") return Modality::audio;
    if (s == "fused") return Modality::fused;
    throw ArgumentError("unknown modality '" + s + "'");
}

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "unknown";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ArgumentError("unknown split '" + s + "'");
}

// ---------------------------------------------------------------------------

FeatureSequence::FeatureSequence(std::string item_id, Modality modality, float feature_rate, std::size_t channels,
                                 std::size_t length, std::vector<float> values)
    : item_id_(std::move(item_id)),
      modality_(modality),
      feature_rate_(feature_rate),
      channels_(channels),
      length_(length),
      values_(std::move(values)) {
    if (channels_ < 1) throw ValidationError("feature sequence needs at least one channel");
    if (length_ < 2) throw ValidationError("feature sequence needs at least two positions, got " + std::to_string(length_));
    if (!(feature_rate_ > 0.0f) || !std::isfinite(feature_rate_)) {
        throw ValidationError("feature rate must be positive and finite");
    }
    if (values_.size() != channels_ * length_) {
        throw ValidationError("feature payload holds " + std::to_string(values_.size()) + " values, expected " +
                              std::to_string(channels_ * length_));
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (!std::isfinite(values_[i])) {
            throw ValidationError("non-finite feature value at (channel " + std::to_string(i / length_) +
                                  ", position " + std::to_string(i % length_) + ")");
        }
    }
}

ag::Mat FeatureSequence::to_matrix() const {
    ag::Mat m(static_cast<Eigen::Index>(channels_), static_cast<Eigen::Index>(length_));
    for (std::size_t i = 0; i < values_.size(); ++i) m.data()[i] = static_cast<double>(values_[i]);
    return m;
}

bool FeatureSequence::bit_equal(const FeatureSequence& o) const {
    return item_id_ == o.item_id_ && modality_ == o.modality_ &&
           std::bit_cast<std::uint32_t>(feature_rate_) == std::bit_cast<std::uint32_t>(o.feature_rate_) &&
           channels_ == o.channels_ && length_ == o.length_ &&
           std::memcmp(values_.data(), o.values_.data(), values_.size() * sizeof(float)) == 0;
}

void SegmentAnnotation::validate() const {
    if (!(duration > 0.0)) throw ValidationError(item_id + ": duration must be positive");
    double previous_end = 0.0;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const Segment& s = segments[i];
        if (!(s.start >= 0.0 && s.start < s.end && s.end <= duration)) {
            throw ValidationError(item_id + ": segment " + std::to_string(i) + " outside [0, duration] or empty");
        }
        if (i > 0 && s.start < previous_end) {
            throw ValidationError(item_id + ": segment " + std::to_string(i) + " overlaps or precedes its predecessor");
        }
        previous_end = s.end;
    }
    if (is_fake != !segments.empty()) throw ValidationError(item_id + ": is_fake disagrees with the segment list");
}

void Prediction::validate() const {
    if (!(start < end)) throw ValidationError("prediction start must precede end");
    if (!(score >= 0.0 && score <= 1.0)) throw ValidationError("prediction score outside [0, 1]");
}

// ---------------------------------------------------------------------------
// .tfz

std::vector<std::uint8_t> encode_feature_sequence(const FeatureSequence& seq) {
    std::vector<std::uint8_t> out;
    out.reserve(kTfzHeaderBytes + seq.values().size() * 4);
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u16(out, kVersion);
    put_u16(out, static_cast<std::uint16_t>(seq.modality()));
    put_u32(out, static_cast<std::uint32_t>(seq.channels()));
    put_u32(out, static_cast<std::uint32_t>(seq.length()));
    put_u32(out, std::bit_cast<std::uint32_t>(seq.feature_rate()));
    for (float v : seq.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

FeatureSequence parse_feature_sequence(std::span<const std::uint8_t> b, std::string item_id) {
    if (b.size() < kTfzHeaderBytes) throw FormatError("truncated header", b.size());
    if (std::memcmp(b.data(), kMagic, 4) != 0) throw FormatError("bad magic", 0);
    if (get_u16(b, 4) != kVersion) throw FormatError("unsupported version " + std::to_string(get_u16(b, 4)), 4);
    const auto modality_code = get_u16(b, 6);
    if (modality_code > 2) throw FormatError("unknown modality code " + std::to_string(modality_code), 6);
    const std::size_t channels = get_u32(b, 8);
    const std::size_t length = get_u32(b, 12);
    const float rate = std::bit_cast<float>(get_u32(b, 16));
    if (channels < 1) throw FormatError("channel count must be positive", 8);
    if (length < 2) throw FormatError("length must be at least 2", 12);
    if (!(rate > 0.0f) || !std::isfinite(rate)) throw FormatError("feature rate must be positive", 16);

    const std::size_t expected = kTfzHeaderBytes + channels * length * 4;
    if (b.size() != expected) {
        throw FormatError("payload holds " + std::to_string((b.size() - kTfzHeaderBytes) / 4) + " values but header says " +
                              std::to_string(channels) + "x" + std::to_string(length),
                          b.size() < expected ? b.size() : expected);
    }
    std::vector<float> values(channels * length);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::size_t at = kTfzHeaderBytes + 4 * i;
        values[i] = std::bit_cast<float>(get_u32(b, at));
        if (!std::isfinite(values[i])) {
            throw ValidationError("non-finite feature value at (channel " + std::to_string(i / length) + ", position " +
                                  std::to_string(i % length) + "), byte offset " + std::to_string(at));
        }
    }
    return FeatureSequence(std::move(item_id), static_cast<Modality>(modality_code), rate, channels, length,
                           std::move(values));
}

void save_feature_sequence(const FeatureSequence& seq, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const auto bytes = encode_feature_sequence(seq);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

FeatureSequence load_feature_sequence(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_feature_sequence(bytes, path.stem().string());
}

// ---------------------------------------------------------------------------
// JSON documents

void save_annotations(const std::vector<SegmentAnnotation>& annos, const fs::path& path) {
    json doc = json::array();
    for (const auto& a : annos) {
        json segs = json::array();
        for (const auto& s : a.segments) segs.push_back({s.start, s.end});
        doc.push_back({{"item_id", a.item_id}, {"duration", a.duration}, {"segments", segs}, {"is_fake", a.is_fake}});
    }
    write_text(path, doc.dump(1) + "\n");
}

std::vector<SegmentAnnotation> load_annotations(const fs::path& path) {
    const json doc = read_json(path);
    if (!doc.is_array()) throw ValidationError(path.string() + ": annotation file must be a JSON array");
    std::vector<SegmentAnnotation> out;
    out.reserve(doc.size());
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const json& e = doc[i];
        const std::string where = path.string() + "[" + std::to_string(i) + "]";
        SegmentAnnotation a;
        a.item_id = field<std::string>(e, "item_id", where);
        a.duration = field<double>(e, "duration", where);
        a.is_fake = field<bool>(e, "is_fake", where);
        for (const auto& s : field<std::vector<std::vector<double>>>(e, "segments", where)) {
            if (s.size() != 2) throw ValidationError(where + ": segments must be [start, end] pairs");
            a.segments.push_back({s[0], s[1]});
        }
        a.validate();
        out.push_back(std::move(a));
    }
    return out;
}

void save_manifest(const DatasetManifest& m, const fs::path& path) {
    json entries = json::array();
    for (const auto& e : m.entries) entries.push_back({{"features", e.features}, {"annotation_index", e.annotation_index}});
    json doc = {{"split", to_string(m.split)},
                {"corpus_seed", m.corpus_seed},
                {"annotations", m.annotations},
                {"entries", entries}};
    write_text(path, doc.dump(1) + "\n");
}

DatasetManifest load_manifest(const fs::path& path) {
    const json doc = read_json(path);
    const std::string where = path.string();
    DatasetManifest m;
    m.split = split_from_string(field<std::string>(doc, "split", where));
    m.corpus_seed = field<std::uint64_t>(doc, "corpus_seed", where);
    m.annotations = field<std::string>(doc, "annotations", where);
    const fs::path dir = path.parent_path();
    const auto annos = load_annotations(resolve(dir, m.annotations));

    std::set<std::string> ids;
    for (const auto& e : field<std::vector<json>>(doc, "entries", where)) {
        ManifestEntry entry{field<std::string>(e, "features", where), field<std::size_t>(e, "annotation_index", where)};
        if (entry.annotation_index >= annos.size()) {
            throw ValidationError(where + ": annotation_index " + std::to_string(entry.annotation_index) + " out of range");
        }
        if (!fs::exists(resolve(dir, entry.features))) throw IoError(where + ": missing feature file " + entry.features);
        if (!ids.insert(annos[entry.annotation_index].item_id).second) {
            throw ValidationError(where + ": duplicate item id " + annos[entry.annotation_index].item_id);
        }
        m.entries.push_back(std::move(entry));
    }
    return m;
}

std::vector<Sample> load_split(const fs::path& manifest_path) {
    const DatasetManifest m = load_manifest(manifest_path);
    const fs::path dir = manifest_path.parent_path();
    const auto annos = load_annotations(resolve(dir, m.annotations));
    std::vector<Sample> out;
    out.reserve(m.entries.size());
    for (const auto& e : m.entries) {
        FeatureSequence seq = load_feature_sequence(resolve(dir, e.features));
        const SegmentAnnotation& a = annos[e.annotation_index];
        if (seq.item_id() != a.item_id) {
            throw ValidationError(manifest_path.string() + ": feature file " + e.features + " does not match item " + a.item_id);
        }
        out.push_back(Sample{std::move(seq), a});
    }
    return out;
}

json prediction_dump_to_json(const std::vector<ItemPredictions>& dump) {
    json doc = json::array();
    for (const auto& item : dump) {
        json segs = json::array();
        for (const auto& p : item.segments) segs.push_back({p.start, p.end, p.score});
        doc.push_back({{"item_id", item.item_id}, {"segments", segs}});
    }
    return doc;
}

std::vector<ItemPredictions> prediction_dump_from_json(const json& doc, const std::string& source) {
    if (!doc.is_array()) throw ValidationError(source + ": prediction dump must be a JSON array");
    std::vector<ItemPredictions> out;
    for (std::size_t i = 0; i < doc.size(); ++i) {
        const std::string where = source + "[" + std::to_string(i) + "]";
        ItemPredictions item;
        item.item_id = field<std::string>(doc[i], "item_id", where);
        for (const auto& s : field<std::vector<std::vector<double>>>(doc[i], "segments", where)) {
            if (s.size() != 3) throw ValidationError(where + ": segments must be [start, end, score] triples");
            Prediction p{s[0], s[1], s[2]};
            p.validate();
            item.segments.push_back(p);
        }
        out.push_back(std::move(item));
    }
    return out;
}

void save_prediction_dump(const std::vector<ItemPredictions>& dump, const fs::path& path) {
    write_text(path, prediction_dump_to_json(dump).dump(1) + "\n");
}

std::vector<ItemPredictions> load_prediction_dump(const fs::path& path) {
    return prediction_dump_from_json(read_json(path), path.string());
}

// ---------------------------------------------------------------------------
// transforms

FeatureSequence resample_temporal(const FeatureSequence& seq, std::size_t target_length) {
    if (target_length < 2) throw ArgumentError("resample_temporal: target length must be at least 2");
    const std::size_t len = seq.length();
    if (target_length == len) return seq;

    const auto taps = linear_taps(len, target_length);
    std::vector<float> out(seq.channels() * target_length);
    for (std::size_t c = 0; c < seq.channels(); ++c) {
        const auto src = seq.channel(c);
        for (std::size_t j = 0; j < target_length; ++j) {
            const auto& tap = taps[j];
            const double v = (1.0 - tap.weight) * static_cast<double>(src[tap.left]) +
                             tap.weight * static_cast<double>(src[tap.left + 1]);
            out[c * target_length + j] = static_cast<float>(v);
        }
    }
    const double rate = static_cast<double>(seq.feature_rate()) * static_cast<double>(target_length) /
                        static_cast<double>(len);
    return FeatureSequence(seq.item_id(), seq.modality(), static_cast<float>(rate), seq.channels(), target_length,
                           std::move(out));
}

FeatureSequence fuse_modalities(const FeatureSequence& visual, const FeatureSequence& audio) {
    if (visual.item_id() != audio.item_id()) {
        throw ArgumentError("fuse_modalities: item ids differ ('" + visual.item_id() + "' vs '" + audio.item_id() + "')");
    }
    const std::size_t len = std::max(visual.length(), audio.length());
    const FeatureSequence v = resample_temporal(visual, len);
    const FeatureSequence a = resample_temporal(audio, len);
    std::vector<float> values;
    values.reserve((v.channels() + a.channels()) * len);
    values.insert(values.end(), v.values().begin(), v.values().end());
    values.insert(values.end(), a.values().begin(), a.values().end());
    return FeatureSequence(v.item_id(), Modality::fused, v.feature_rate(), v.channels() + a.channels(), len,
                           std::move(values));
}

}  // namespace tfl
