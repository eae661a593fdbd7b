#pragma once

#include "mdsa/classify.hpp"
#include "mdsa/dump.hpp"
#include "mdsa/signature.hpp"
#include "mdsa/stats.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mdsa {

inline constexpr const char* kToolkitVersion = "0.1.0";

struct Tile {
    uint64_t input_start = 0;
    uint64_t input_len = 0;
    uint64_t first_window_offset = 0;
    size_t first_window = 0; // global window index
    size_t window_count = 0;
    // Byte ownership partition for whole-stream stages (signatures);
    // matches starting in [owned_begin, owned_end) belong to this tile.
    uint64_t owned_begin = 0;
    uint64_t owned_end = 0;
};

struct TilePlan {
    std::vector<Tile> tiles;
    WindowConfig cfg{};
    size_t workers = 1;
};

// Contiguous window ownership, balanced within +-1 window per tile.
// Tile inputs overlap by window_len - stride where tiles meet.
TilePlan plan_tiles(uint64_t dump_len, const WindowConfig& cfg, size_t workers);

// Runs fn(tile_index) across a pool of `workers` threads. The first
// failing tile (by index) aborts the run and is rethrown with its tile
// id prepended; outputs of tiles that finished stay intact.
void run_tiles(size_t tile_count, size_t workers, const std::function<void(size_t)>& fn);

// Filtered: classification runs on the evasion-filtered stream and
// verdicts map back to dump coordinates. Baseline: a plain Shannon
// band detector over raw windows, kept as the comparison point the
// evasions are designed to beat.
enum class DetectorMode { Filtered, Baseline };
const char* detector_mode_name(DetectorMode mode);
DetectorMode detector_mode_from_name(const std::string& name);

struct ScanConfig {
    WindowConfig window{};
    size_t workers = 1;
    DetectorMode detector = DetectorMode::Filtered;
    bool signatures = true;
    bool classify = true;
    bool crossview = true;
    size_t min_run = 2;
    // Packed/Encrypted regions need at least this confidence to count
    // as hidden-code candidates; Code regions always count.
    double hidden_confidence = 0.5;
    FilterConfig filter{};
    // Unset selects default_signatures() / default_model().
    std::optional<std::vector<Signature>> signature_set;
    std::optional<ClassifierModel> model;
    // Excised gaps up to this size are bridged when filtered-stream
    // regions map back to dump coordinates; larger gaps split regions.
    uint64_t bridge_limit = 128 * 1024;
};

struct StageTiming {
    std::string stage;
    double seconds = 0;
};

struct ScanReport {
    std::string toolkit_version = kToolkitVersion;
    std::string source_id;
    uint64_t base_address = 0;
    uint64_t dump_len = 0;
    std::string dump_hash; // fnv1a-64 of the dump bytes, hex
    // Config echo.
    WindowConfig window{};
    std::string detector;
    size_t min_run = 2;
    double hidden_confidence = 0.5;
    FilterConfig filter{};
    uint64_t bridge_limit = 0;
    double excised_fraction = 0; // filtered detector only
    std::vector<WindowStats> windows;
    std::vector<Match> matches;
    std::vector<RegionVerdict> regions;   // dump coordinates, ascending
    std::vector<RegionVerdict> crossview; // hidden flag set on every entry
    // Execution details, excluded from the canonical serialization.
    size_t workers = 1;
    std::vector<StageTiming> timings;

    bool hidden_found() const {
        for (const auto& r : crossview)
            if (r.hidden.value_or(false))
                return true;
        return false;
    }
};

// Stage order: stats, signatures, filter, classify, segment, crossview.
// The report content is identical for any worker count.
ScanReport run_scan(const MemoryDump& dump, const RegionManifest& manifest,
                    const ScanConfig& cfg);

// Interval difference of detection-worthy regions against the declared
// manifest; uncovered sub-spans come back hidden = true, covered spans
// hidden = false.
std::vector<RegionVerdict> cross_view(const std::vector<RegionVerdict>& regions,
                                      const RegionManifest& manifest, uint64_t dump_len,
                                      double hidden_confidence = 0.5);

struct BenchRow {
    std::string stage;
    size_t workers = 0;
    uint64_t bytes = 0;
    double seconds = 0;
    double mib_per_s = 0;
    double speedup = 0; // vs the first listed worker count
};

std::vector<BenchRow> bench(const std::string& preset,
                            const std::vector<size_t>& worker_counts, uint64_t seed = 1);

// Header plus one row per stage per worker count:
// stage,workers,bytes,seconds,mib_per_s,speedup
std::string bench_csv(const std::vector<BenchRow>& rows);

} // namespace mdsa
