#include "mdsa/pipeline.hpp"

#include "mdsa/evasion.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace mdsa {

TilePlan plan_tiles(uint64_t dump_len, const WindowConfig& cfg, size_t workers) {
    if (workers == 0)
        throw std::invalid_argument("workers must be >= 1");
    cfg.validate(dump_len);

    const size_t nwin = window_count(dump_len, cfg);
    const size_t ntiles = std::min(workers, nwin);
    TilePlan plan;
    plan.cfg = cfg;
    plan.workers = workers;

    const size_t base = nwin / ntiles;
    const size_t extra = nwin % ntiles;
    size_t next = 0;
    for (size_t t = 0; t < ntiles; ++t) {
        Tile tile;
        tile.window_count = base + (t < extra ? 1 : 0);
        tile.first_window = next;
        tile.first_window_offset = window_offset(next, cfg);
        tile.input_start = tile.first_window_offset;
        tile.input_len = (tile.window_count - 1) * cfg.stride + cfg.window_len;
        next += tile.window_count;
        plan.tiles.push_back(tile);
    }
    for (size_t t = 0; t < plan.tiles.size(); ++t) {
        plan.tiles[t].owned_begin = t == 0 ? 0 : plan.tiles[t].input_start;
        plan.tiles[t].owned_end =
            t + 1 < plan.tiles.size() ? plan.tiles[t + 1].input_start : dump_len;
    }
    return plan;
}

void run_tiles(size_t tile_count, size_t workers, const std::function<void(size_t)>& fn) {
    if (workers == 0)
        throw std::invalid_argument("workers must be >= 1");
    if (tile_count == 0)
        return;

    const size_t nthreads = std::min(workers, tile_count);
    if (nthreads == 1) {
        for (size_t i = 0; i < tile_count; ++i) {
            try {
                fn(i);
            } catch (const std::exception& e) {
                throw std::runtime_error("tile " + std::to_string(i) + ": " + e.what());
            }
        }
        return;
    }

    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::mutex err_mx;
    size_t err_tile = tile_count;
    std::string err_what;

    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (size_t t = 0; t < nthreads; ++t) {
        pool.emplace_back([&] {
            while (!failed.load(std::memory_order_relaxed)) {
                const size_t i = next.fetch_add(1, std::memory_order_relaxed);
                if (i >= tile_count)
                    return;
                try {
                    fn(i);
                } catch (const std::exception& e) {
                    std::lock_guard lk(err_mx);
                    if (i < err_tile) {
                        err_tile = i;
                        err_what = e.what();
                    }
                    failed.store(true);
                } catch (...) {
                    std::lock_guard lk(err_mx);
                    if (i < err_tile) {
                        err_tile = i;
                        err_what = "unknown error";
                    }
                    failed.store(true);
                }
            }
        });
    }
    for (auto& th : pool)
        th.join();
    if (failed.load())
        throw std::runtime_error("tile " + std::to_string(err_tile) + ": " + err_what);
}

const char* detector_mode_name(DetectorMode mode) {
    return mode == DetectorMode::Filtered ? "filtered" : "baseline";
}

DetectorMode detector_mode_from_name(const std::string& name) {
    if (name == "filtered")
        return DetectorMode::Filtered;
    if (name == "baseline")
        return DetectorMode::Baseline;
    throw std::invalid_argument("unknown detector mode: " + name);
}

namespace {

// Kept (non-excised) dump segment and its offset in the filtered stream.
struct KeptSegment {
    uint64_t filtered_start = 0;
    uint64_t dump_start = 0;
    uint64_t length = 0;
};

std::vector<KeptSegment> kept_segments(const std::vector<ByteSpan>& excised, uint64_t dump_len) {
    std::vector<KeptSegment> kept;
    uint64_t dump_pos = 0;
    uint64_t filtered_pos = 0;
    for (const ByteSpan& cut : excised) {
        if (cut.start > dump_pos) {
            kept.push_back({filtered_pos, dump_pos, cut.start - dump_pos});
            filtered_pos += cut.start - dump_pos;
        }
        dump_pos = cut.end();
    }
    if (dump_pos < dump_len)
        kept.push_back({filtered_pos, dump_pos, dump_len - dump_pos});
    return kept;
}

// Filtered-stream regions become dump-coordinate regions; excised gaps
// inside a region are bridged up to bridge_limit, larger gaps split it.
std::vector<RegionVerdict> map_regions_to_dump(const std::vector<RegionVerdict>& regions,
                                               const std::vector<ByteSpan>& excised,
                                               uint64_t dump_len, uint64_t bridge_limit) {
    const std::vector<KeptSegment> kept = kept_segments(excised, dump_len);
    std::vector<RegionVerdict> out;
    size_t k = 0;
    for (const RegionVerdict& r : regions) {
        const uint64_t s = r.start;
        const uint64_t e = r.start + r.length;
        std::vector<ByteSpan> spans;
        for (size_t i = k; i < kept.size() && kept[i].filtered_start < e; ++i) {
            const uint64_t fs = std::max(s, kept[i].filtered_start);
            const uint64_t fe = std::min(e, kept[i].filtered_start + kept[i].length);
            if (fs >= fe)
                continue;
            const uint64_t ds = kept[i].dump_start + (fs - kept[i].filtered_start);
            const uint64_t de = ds + (fe - fs);
            if (!spans.empty() && ds - spans.back().end() <= bridge_limit)
                spans.back().length = de - spans.back().start;
            else
                spans.push_back({ds, de - ds});
            k = i;
        }
        for (const ByteSpan& sp : spans) {
            RegionVerdict rv = r;
            rv.start = sp.start;
            rv.length = sp.length;
            out.push_back(std::move(rv));
        }
    }
    return out;
}

class StageTimer {
public:
    explicit StageTimer(std::vector<StageTiming>& out) : out_(out) {}

    template <typename Fn>
    void run(const char* stage, Fn&& body) {
        const auto t0 = std::chrono::steady_clock::now();
        body();
        const auto t1 = std::chrono::steady_clock::now();
        out_.push_back({stage, std::chrono::duration<double>(t1 - t0).count()});
    }

private:
    std::vector<StageTiming>& out_;
};

} // namespace

ScanReport run_scan(const MemoryDump& dump, const RegionManifest& manifest,
                    const ScanConfig& cfg) {
    if (cfg.workers == 0)
        throw std::invalid_argument("workers must be >= 1");
    const TilePlan plan = plan_tiles(dump.size(), cfg.window, cfg.workers);

    ScanReport rep;
    rep.source_id = dump.source_id();
    rep.base_address = dump.base_address();
    rep.dump_len = dump.size();
    rep.dump_hash = fnv1a64_hex(dump.bytes());
    rep.window = cfg.window;
    rep.detector = detector_mode_name(cfg.detector);
    rep.min_run = cfg.min_run;
    rep.hidden_confidence = cfg.hidden_confidence;
    rep.filter = cfg.filter;
    rep.bridge_limit = cfg.bridge_limit;
    rep.workers = cfg.workers;

    StageTimer timer(rep.timings);

    timer.run("stats", [&] {
        rep.windows.resize(window_count(dump.size(), cfg.window));
        run_tiles(plan.tiles.size(), cfg.workers, [&](size_t t) {
            const Tile& tile = plan.tiles[t];
            for (size_t w = 0; w < tile.window_count; ++w) {
                const size_t wi = tile.first_window + w;
                const uint64_t off = window_offset(wi, cfg.window);
                rep.windows[wi] = compute_window_stats(
                    dump.bytes().subspan(off, cfg.window.window_len), off);
            }
        });
    });

    if (cfg.signatures) {
        timer.run("signatures", [&] {
            const SignatureSet sigset = SignatureSet::compile(
                cfg.signature_set ? *cfg.signature_set : default_signatures());
            const uint64_t margin =
                sigset.max_pattern_len() > 0 ? sigset.max_pattern_len() - 1 : 0;
            std::vector<std::vector<Match>> per_tile(plan.tiles.size());
            run_tiles(plan.tiles.size(), cfg.workers, [&](size_t t) {
                const Tile& tile = plan.tiles[t];
                const uint64_t begin = tile.owned_begin;
                const uint64_t end = std::min<uint64_t>(dump.size(), tile.owned_end + margin);
                auto ms = sigset.scan(dump.bytes().subspan(begin, end - begin), begin);
                std::erase_if(ms, [&](const Match& m) { return m.offset >= tile.owned_end; });
                per_tile[t] = std::move(ms);
            });
            for (auto& ms : per_tile)
                rep.matches.insert(rep.matches.end(), ms.begin(), ms.end());
        });
    }

    if (!cfg.classify)
        return rep;

    std::vector<uint8_t> filtered;
    std::vector<ByteSpan> excised;
    const bool filtered_mode = cfg.detector == DetectorMode::Filtered;
    if (filtered_mode) {
        timer.run("filter", [&] {
            FilterResult fr = evasion_filter(dump.bytes(), cfg.filter);
            filtered = std::move(fr.filtered);
            excised = std::move(fr.excised);
            rep.excised_fraction =
                1.0 - static_cast<double>(filtered.size()) / static_cast<double>(dump.size());
        });
    }

    std::vector<WindowVerdict> verdicts;
    timer.run("classify", [&] {
        const ClassifierModel model = cfg.model ? *cfg.model : default_model();
        if (filtered_mode) {
            if (filtered.size() < cfg.window.window_len)
                return; // everything excised; nothing classifiable remains
            const std::span<const uint8_t> stream(filtered);
            const TilePlan fplan = plan_tiles(filtered.size(), cfg.window, cfg.workers);
            verdicts.resize(window_count(filtered.size(), cfg.window));
            run_tiles(fplan.tiles.size(), cfg.workers, [&](size_t t) {
                const Tile& tile = fplan.tiles[t];
                for (size_t w = 0; w < tile.window_count; ++w) {
                    const size_t wi = tile.first_window + w;
                    const uint64_t off = window_offset(wi, cfg.window);
                    WindowVerdict v;
                    v.offset = off;
                    v.features = features_from_bytes(stream.subspan(off, cfg.window.window_len));
                    const auto [label, conf] = classify_window(model, v.features);
                    v.label = label;
                    v.confidence = conf;
                    verdicts[wi] = v;
                }
            });
        } else {
            double lo = 0, hi = 8;
            for (const ClassBox& box : model.boxes) {
                if (box.label == RegionLabel::Code) {
                    lo = box.lo[0];
                    hi = box.hi[0];
                }
            }
            verdicts.resize(rep.windows.size());
            for (size_t wi = 0; wi < rep.windows.size(); ++wi) {
                const WindowStats& ws = rep.windows[wi];
                WindowVerdict v;
                v.offset = ws.offset;
                v.features[0] = ws.shannon_bits;
                v.features[1] = ws.fast_entropy;
                v.features[2] = ws.chi_square;
                v.features[3] = ws.hamming_fraction;
                v.features[4] = ws.mean;
                v.features[5] = ws.stddev;
                v.features[6] = ws.kurtosis;
                v.features[7] = ws.bigram_bits;
                const bool in_band = ws.shannon_bits >= lo && ws.shannon_bits <= hi;
                v.label = in_band ? RegionLabel::Code : RegionLabel::Unknown;
                v.confidence = in_band ? 1.0 : 0.0;
                verdicts[wi] = v;
            }
        }
    });

    timer.run("segment", [&] {
        if (verdicts.empty())
            return;
        auto regions = segment_regions(verdicts, cfg.window.window_len, cfg.min_run);
        if (filtered_mode)
            rep.regions = map_regions_to_dump(regions, excised, dump.size(), cfg.bridge_limit);
        else
            rep.regions = std::move(regions);
    });

    if (cfg.crossview) {
        timer.run("crossview", [&] {
            rep.crossview = cross_view(rep.regions, manifest, dump.size(), cfg.hidden_confidence);
        });
    }
    return rep;
}

std::vector<RegionVerdict> cross_view(const std::vector<RegionVerdict>& regions,
                                      const RegionManifest& manifest, uint64_t dump_len,
                                      double hidden_confidence) {
    std::vector<ByteSpan> cover;
    for (const auto& entry : manifest.entries) {
        if (entry.start + entry.length > dump_len || entry.start + entry.length < entry.start)
            throw std::out_of_range("manifest entry '" + entry.name + "' out of dump bounds");
        if (entry.length > 0)
            cover.push_back({entry.start, entry.length});
    }
    std::sort(cover.begin(), cover.end(),
              [](const ByteSpan& a, const ByteSpan& b) { return a.start < b.start; });
    for (size_t i = 1; i < cover.size();) {
        if (cover[i].start <= cover[i - 1].end()) {
            cover[i - 1].length = std::max(cover[i - 1].end(), cover[i].end()) - cover[i - 1].start;
            cover.erase(cover.begin() + static_cast<ptrdiff_t>(i));
        } else {
            ++i;
        }
    }

    std::vector<RegionVerdict> out;
    const auto emit = [&](const RegionVerdict& r, uint64_t start, uint64_t end, bool hidden) {
        RegionVerdict rv = r;
        rv.start = start;
        rv.length = end - start;
        rv.hidden = hidden;
        out.push_back(std::move(rv));
    };
    for (const RegionVerdict& r : regions) {
        const bool eligible =
            r.label == RegionLabel::Code ||
            ((r.label == RegionLabel::Packed || r.label == RegionLabel::Encrypted) &&
             r.confidence >= hidden_confidence);
        if (!eligible || r.length == 0)
            continue;
        uint64_t cur = r.start;
        const uint64_t end = r.start + r.length;
        for (const ByteSpan& c : cover) {
            if (c.end() <= cur)
                continue;
            if (c.start >= end)
                break;
            if (c.start > cur)
                emit(r, cur, c.start, true);
            const uint64_t ie = std::min(end, c.end());
            emit(r, std::max(cur, c.start), ie, false);
            cur = ie;
            if (cur >= end)
                break;
        }
        if (cur < end)
            emit(r, cur, end, true);
    }
    return out;
}

std::vector<BenchRow> bench(const std::string& preset,
                            const std::vector<size_t>& worker_counts, uint64_t seed) {
    if (worker_counts.empty())
        throw std::invalid_argument("bench needs at least one worker count");
    const BuiltDump built = build_dump(preset_recipe(preset, seed));
    const double mib = static_cast<double>(built.dump.size()) / (1024.0 * 1024.0);

    std::vector<BenchRow> rows;
    std::vector<std::pair<std::string, double>> baseline;
    for (size_t wi = 0; wi < worker_counts.size(); ++wi) {
        ScanConfig cfg;
        cfg.workers = worker_counts[wi];
        const ScanReport rep = run_scan(built.dump, built.manifest, cfg);

        std::vector<StageTiming> stages = rep.timings;
        double total = 0;
        for (const auto& st : stages)
            total += st.seconds;
        stages.push_back({"total", total});

        for (const auto& st : stages) {
            if (wi == 0)
                baseline.emplace_back(st.stage, st.seconds);
            double base = st.seconds;
            for (const auto& [name, secs] : baseline)
                if (name == st.stage)
                    base = secs;
            BenchRow row;
            row.stage = st.stage;
            row.workers = cfg.workers;
            row.bytes = built.dump.size();
            row.seconds = st.seconds;
            row.mib_per_s = st.seconds > 0 ? mib / st.seconds : 0.0;
            row.speedup = st.seconds > 0 ? base / st.seconds : 1.0;
            rows.push_back(row);
        }
    }
    return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::ostringstream out;
    out << "stage,workers,bytes,seconds,mib_per_s,speedup\n";
    char buf[160];
    for (const BenchRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%zu,%llu,%.6f,%.3f,%.3f\n", r.stage.c_str(),
                      r.workers, static_cast<unsigned long long>(r.bytes), r.seconds,
                      r.mib_per_s, r.speedup);
        out << buf;
    }
    return out.str();
}

} // namespace mdsa
