#include "tfl/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "tfl/errors.hpp"
#include "tfl/params.hpp"

namespace tfl::corpus {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent stream per (seed, item, purpose).
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t item, std::uint64_t purpose) {
    return splitmix64(splitmix64(seed) ^ splitmix64(item * 4 + purpose + 1));
}

enum Purpose : std::uint64_t { kBase = 0, kPlan = 1, kShuffle = 2 };

bool overlaps(const Segment& a, const Segment& b) { return a.start < b.end && b.start < a.end; }

}  // namespace

std::string to_string(ForgeryMode m) {
    switch (m) {
        case ForgeryMode::mean_shift: return "mean_shift";
        case ForgeryMode::noise_scale: return "noise_scale";
        case ForgeryMode::shuffle: return "shuffle";
    }
    return "unknown";
}

ForgeryMode forgery_mode_from_string(const std::string& s) {
    if (s == "mean_shift") return ForgeryMode::mean_shift;
    if (s == "noise_scale") return ForgeryMode::noise_scale;
    if (s == "shuffle") return ForgeryMode::shuffle;
    throw ConfigError("unknown forgery mode '" + s + "'");
}

void CorpusConfig::validate() const {
    if (num_items < 1) throw ConfigError("num_items must be positive");
    if (channels < 1) throw ConfigError("channels must be positive");
    if (length_T < 2) throw ConfigError("length_T must be at least 2");
    if (!(feature_rate > 0.0)) throw ConfigError("feature_rate must be positive");
    if (!(real_fraction > 0.0 && real_fraction < 1.0)) throw ConfigError("real_fraction must lie in (0, 1)");
    if (max_segments_per_item < 1) throw ConfigError("max_segments_per_item must be positive");
    if (!(short_fraction >= 0.0 && short_fraction <= 1.0)) throw ConfigError("short_fraction must lie in [0, 1]");
    if (!(shift_magnitude > 0.0)) throw ConfigError("shift_magnitude must be positive");
    if (max_segments_per_item * kShortMin > duration()) {
        throw ConfigError("infeasible: " + std::to_string(max_segments_per_item) + " segments of at least " +
                          std::to_string(kShortMin) + " s exceed the item duration " + std::to_string(duration()) + " s");
    }
    if (short_fraction < 1.0 && kShortMax > duration()) {
        throw ConfigError("infeasible: item duration shorter than the minimum long segment");
    }
}

CorpusConfig config_from_json(const json& j) {
    CorpusConfig c;
    try {
        c.num_items = j.value("num_items", c.num_items);
        c.channels = j.value("channels", c.channels);
        c.length_T = j.value("length_T", c.length_T);
        c.feature_rate = j.value("feature_rate", c.feature_rate);
        c.real_fraction = j.value("real_fraction", c.real_fraction);
        c.max_segments_per_item = j.value("max_segments_per_item", c.max_segments_per_item);
        c.short_fraction = j.value("short_fraction", c.short_fraction);
        c.shift_magnitude = j.value("shift_magnitude", c.shift_magnitude);
        c.seed = j.value("seed", c.seed);
        if (j.contains("forgery_mode")) c.forgery_mode = forgery_mode_from_string(j.at("forgery_mode").get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("corpus config: ") + e.what());
    }
    c.validate();
    return c;
}

json to_json(const CorpusConfig& c) {
    return {{"num_items", c.num_items},
            {"channels", c.channels},
            {"length_T", c.length_T},
            {"feature_rate", c.feature_rate},
            {"real_fraction", c.real_fraction},
            {"max_segments_per_item", c.max_segments_per_item},
            {"short_fraction", c.short_fraction},
            {"shift_magnitude", c.shift_magnitude},
            {"seed", c.seed},
            {"forgery_mode", to_string(c.forgery_mode)}};
}

std::string item_id(int item_index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "item_%05d", item_index);
    return buf;
}

FeatureSequence generate_base_sequence(const CorpusConfig& cfg, int item_index) {
    if (item_index < 0 || item_index >= cfg.num_items) {
        throw ArgumentError("item_index " + std::to_string(item_index) + " outside [0, num_items)");
    }
    Rng rng(stream_seed(cfg.seed, static_cast<std::uint64_t>(item_index), kBase));
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto len = static_cast<std::size_t>(cfg.length_T);
    const auto ch = static_cast<std::size_t>(cfg.channels);
    const double stationary_sd = 1.0 / std::sqrt(1.0 - kArCoefficient * kArCoefficient);

    std::vector<float> values(ch * len);
    for (std::size_t c = 0; c < ch; ++c) {
        double x = stationary_sd * normal(rng);
        values[c * len] = static_cast<float>(x);
        for (std::size_t t = 1; t < len; ++t) {
            x = kArCoefficient * x + normal(rng);
            values[c * len + t] = static_cast<float>(x);
        }
    }
    return FeatureSequence(item_id(item_index), Modality::visual, static_cast<float>(cfg.feature_rate), ch, len,
                           std::move(values));
}

FeatureSequence inject_forgery(const FeatureSequence& seq, const Segment& segment, ForgeryMode mode, double magnitude,
                               std::uint64_t shuffle_seed) {
    if (!(segment.start >= 0.0 && segment.start < segment.end && segment.end <= seq.duration())) {
        throw ArgumentError("inject_forgery: segment [" + std::to_string(segment.start) + ", " +
                            std::to_string(segment.end) + "] outside [0, " + std::to_string(seq.duration()) + "]");
    }
    if (!(magnitude > 0.0)) throw ArgumentError("inject_forgery: magnitude must be positive");

    const std::size_t len = seq.length();
    const double rate = seq.feature_rate();
    std::vector<std::size_t> inside;
    for (std::size_t p = 0; p < len; ++p) {
        const double time = static_cast<double>(p) / rate;
        if (time >= segment.start && time < segment.end) inside.push_back(p);
    }
    std::vector<float> values(seq.values().begin(), seq.values().end());
    if (inside.empty()) {
        return FeatureSequence(seq.item_id(), seq.modality(), seq.feature_rate(), seq.channels(), len, std::move(values));
    }

    std::vector<std::size_t> order;
    if (mode == ForgeryMode::shuffle) {
        order = inside;
        Rng rng(shuffle_seed);
        std::shuffle(order.begin(), order.end(), rng);
    }
    for (std::size_t c = 0; c < seq.channels(); ++c) {
        const auto src = seq.channel(c);
        float* dst = values.data() + c * len;
        switch (mode) {
            case ForgeryMode::mean_shift:
                for (std::size_t p : inside) dst[p] = static_cast<float>(static_cast<double>(src[p]) + magnitude);
                break;
            case ForgeryMode::noise_scale:
                for (std::size_t p : inside) {
                    if (p == 0) {
                        dst[p] = static_cast<float>((1.0 + magnitude) * src[p]);
                        continue;
                    }
                    const double innovation = static_cast<double>(src[p]) - kArCoefficient * src[p - 1];
                    dst[p] = static_cast<float>(kArCoefficient * dst[p - 1] + (1.0 + magnitude) * innovation);
                }
                break;
            case ForgeryMode::shuffle:
                for (std::size_t i = 0; i < inside.size(); ++i) dst[inside[i]] = src[order[i]];
                break;
        }
    }
    return FeatureSequence(seq.item_id(), seq.modality(), seq.feature_rate(), seq.channels(), len, std::move(values));
}

namespace {

struct ItemRoles {
    std::vector<bool> is_real;
    std::array<std::vector<int>, 3> split_items;
};

ItemRoles assign_roles(const CorpusConfig& cfg) {
    const int n = cfg.num_items;
    Rng rng(stream_seed(cfg.seed, 0, 3));
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);

    ItemRoles roles;
    roles.is_real.assign(static_cast<std::size_t>(n), false);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto n_real = static_cast<int>(std::lround(cfg.real_fraction * n));
    for (int i = 0; i < n_real; ++i) roles.is_real[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] = true;

    std::shuffle(perm.begin(), perm.end(), rng);
    const auto n_train = static_cast<int>(std::lround(0.7 * n));
    const auto n_val = std::min(n - n_train, static_cast<int>(std::lround(0.1 * n)));
    for (int i = 0; i < n; ++i) {
        const int split = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
        roles.split_items[static_cast<std::size_t>(split)].push_back(perm[static_cast<std::size_t>(i)]);
    }
    for (auto& items : roles.split_items) std::sort(items.begin(), items.end());
    return roles;
}

}  // namespace

std::vector<Segment> plan_segments(const CorpusConfig& cfg, int item_index) {
    if (item_index < 0 || item_index >= cfg.num_items) {
        throw ArgumentError("item_index " + std::to_string(item_index) + " outside [0, num_items)");
    }
    if (assign_roles(cfg).is_real[static_cast<std::size_t>(item_index)]) return {};
    Rng rng(stream_seed(cfg.seed, static_cast<std::uint64_t>(item_index), kPlan));
    std::uniform_int_distribution<int> count_dist(1, cfg.max_segments_per_item);
    std::bernoulli_distribution is_short(cfg.short_fraction);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double duration = cfg.duration();

    const int count = count_dist(rng);
    std::vector<Segment> segments;
    for (int k = 0; k < count; ++k) {
        const bool short_seg = is_short(rng);
        const double lo = short_seg ? kShortMin : kShortMax;
        const double hi = short_seg ? kShortMax : kLongMax;
        const double length = std::exp(std::log(lo) + unit(rng) * (std::log(hi) - std::log(lo)));
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            const double start = unit(rng) * (duration - length);
            const Segment candidate{start, start + length};
            if (std::none_of(segments.begin(), segments.end(),
                             [&](const Segment& o) { return overlaps(o, candidate); })) {
                segments.push_back(candidate);
                placed = true;
            }
        }
        if (!placed) {
            throw ConfigError("cannot place " + std::to_string(count) + " non-overlapping segments in item " +
                              item_id(item_index));
        }
    }
    std::sort(segments.begin(), segments.end(), [](const Segment& a, const Segment& b) { return a.start < b.start; });
    return segments;
}

CorpusBuild build_corpus(const CorpusConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    fs::create_directories(out_dir / "features");
    const ItemRoles roles = assign_roles(cfg);

    CorpusBuild build;
    const Split splits[3] = {Split::train, Split::val, Split::test};
    for (std::size_t s = 0; s < 3; ++s) {
        std::vector<SegmentAnnotation> annos;
        DatasetManifest& manifest = build.manifests[s];
        manifest.split = splits[s];
        manifest.corpus_seed = cfg.seed;
        manifest.annotations = "annotations_" + to_string(splits[s]) + ".json";

        for (int idx : roles.split_items[s]) {
            FeatureSequence seq = generate_base_sequence(cfg, idx);
            SegmentAnnotation anno{seq.item_id(), seq.duration(), {}, false};
            anno.segments = plan_segments(cfg, idx);
            if (!anno.segments.empty()) {
                anno.is_fake = true;
                for (std::size_t k = 0; k < anno.segments.size(); ++k) {
                    const auto shuffle_seed = stream_seed(cfg.seed, static_cast<std::uint64_t>(idx), kShuffle) + k;
                    seq = inject_forgery(seq, anno.segments[k], cfg.forgery_mode, cfg.shift_magnitude, shuffle_seed);
                    build.stats.num_segments += 1;
                    if (anno.segments[k].length() < 1.0) build.stats.num_short_segments += 1;
                }
                build.stats.num_fake += 1;
            } else {
                build.stats.num_real += 1;
            }
            anno.validate();
            const std::string rel = "features/" + seq.item_id() + ".tfz";
            save_feature_sequence(seq, out_dir / rel);
            manifest.entries.push_back({rel, annos.size()});
            annos.push_back(std::move(anno));
        }
        save_annotations(annos, out_dir / manifest.annotations);
        save_manifest(manifest, out_dir / ("manifest_" + to_string(splits[s]) + ".json"));
    }

    json stats = {{"num_real", build.stats.num_real},
                  {"num_fake", build.stats.num_fake},
                  {"num_segments", build.stats.num_segments},
                  {"num_short_segments", build.stats.num_short_segments},
                  {"config", to_json(cfg)}};
    std::ofstream(out_dir / "corpus_stats.json") << stats.dump(1) << "\n";
    return build;
}

}  // namespace tfl::corpus
