#pragma once

#include "mdsa/dump.hpp"
#include "mdsa/stats.hpp"

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mdsa {

enum class RegionLabel : uint8_t { Zero, Text, Code, Header, Packed, Encrypted, Unknown };
inline constexpr size_t kRegionLabelCount = 7;

const char* region_label_name(RegionLabel label);
RegionLabel region_label_from_name(const std::string& name);

// Window statistics plus signature/disassembly evidence, in a fixed
// order shared by models, reports, and tests.
inline constexpr size_t kFeatureDim = 10;
inline constexpr const char* kFeatureVersion = "fv1";
extern const std::array<const char*, kFeatureDim> kFeatureNames;

struct FeatureVector {
    std::array<double, kFeatureDim> values{};

    double& operator[](size_t i) { return values[i]; }
    double operator[](size_t i) const { return values[i]; }
};

FeatureVector features_from_bytes(std::span<const uint8_t> window);
FeatureVector extract_features(const MemoryDump& dump, uint64_t offset, size_t window_len);

// Per-class axis-aligned interval boxes learned as mean +- k*stddev.
// Boxes are kept in priority order (most specific class first) and the
// first box containing a feature vector wins.
struct ClassBox {
    RegionLabel label = RegionLabel::Unknown;
    std::array<double, kFeatureDim> lo{};
    std::array<double, kFeatureDim> hi{};
};

struct ClassifierModel {
    std::string version = kFeatureVersion;
    size_t window_len = 256;
    double k = 3.0;
    std::vector<ClassBox> boxes;
};

struct LabeledSample {
    std::vector<uint8_t> bytes;
    RegionLabel label = RegionLabel::Unknown;
};

inline constexpr size_t kMinSamplesPerClass = 20;

ClassifierModel calibrate(const std::vector<LabeledSample>& corpus, double k = 3.0,
                          size_t window_len = 256);

std::pair<RegionLabel, double> classify_window(const ClassifierModel& model,
                                               const FeatureVector& fv);

struct WindowVerdict {
    uint64_t offset = 0;
    RegionLabel label = RegionLabel::Unknown;
    double confidence = 0;
    FeatureVector features;
};

struct RegionVerdict {
    uint64_t start = 0;
    uint64_t length = 0;
    RegionLabel label = RegionLabel::Unknown;
    double confidence = 0;
    std::vector<std::pair<std::string, double>> evidence; // mean feature values
    std::optional<bool> hidden;                           // set by cross-view
};

// Merges same-label neighbors and absorbs runs shorter than min_run
// into the longer neighbor (ties to the left). Output partitions
// [first offset, last offset + window_len) exactly.
std::vector<RegionVerdict> segment_regions(const std::vector<WindowVerdict>& verdicts,
                                           size_t window_len, size_t min_run = 2);

// Inserted-block excision: a sub-window qualifies when its top byte
// concentration reaches `concentration` or its entropy drops to
// `max_entropy_bits`; maximal qualifying runs are cut out, then run
// edges extend over adjacent bytes drawn from the run's symbol set
// (at most sub_window bytes each side) to trim grid residue.
struct FilterConfig {
    size_t sub_window = 64;
    double concentration = 0.9;
    double max_entropy_bits = 1.0;
    bool extend_edges = true;
};

struct FilterResult {
    std::vector<uint8_t> filtered;
    std::vector<ByteSpan> excised; // input coordinates, sorted
};

FilterResult evasion_filter(std::span<const uint8_t> bytes, const FilterConfig& cfg = {});

struct RobustEntropy {
    double raw_shannon = 0;
    double filtered_shannon = 0;
    double excised_fraction = 0;
};

RobustEntropy robust_entropy(std::span<const uint8_t> bytes, const FilterConfig& cfg = {});

// Plain-text model table: header line, then `class feature lo hi` rows.
ClassifierModel parse_model(const std::string& text);
ClassifierModel load_model(const std::string& path);
std::string serialize_model(const ClassifierModel& model);
void save_model(const ClassifierModel& model, const std::string& path);

// Seeded window corpus over all six classes; window_len bytes each.
std::vector<LabeledSample> synthetic_corpus(uint64_t seed, size_t per_class,
                                            size_t window_len = 256);

inline constexpr uint64_t kDefaultCorpusSeed = 0x6d647361; // distinct from test seeds
ClassifierModel default_model();

} // namespace mdsa
