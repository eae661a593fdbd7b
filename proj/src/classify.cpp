#include "mdsa/classify.hpp"

#include "mdsa/disasm.hpp"
#include "mdsa/evasion.hpp"
#include "mdsa/rng.hpp"
#include "mdsa/signature.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace mdsa {

const char* region_label_name(RegionLabel label) {
    static const char* names[kRegionLabelCount] = {"zero",   "text",      "code", "header",
                                                   "packed", "encrypted", "unknown"};
    return names[static_cast<size_t>(label)];
}

RegionLabel region_label_from_name(const std::string& name) {
    for (size_t i = 0; i < kRegionLabelCount; ++i)
        if (name == region_label_name(static_cast<RegionLabel>(i)))
            return static_cast<RegionLabel>(i);
    throw std::invalid_argument("unknown region label: " + name);
}

const std::array<const char*, kFeatureDim> kFeatureNames = {
    "shannon", "fast_entropy", "chi2",   "hamming",     "mean",
    "stddev",  "kurtosis",     "bigram", "ptr_density", "valid_ratio"};

namespace {

// Declared span of each feature; epsilon widening for degenerate
// training features is 1% of this.
double feature_range(size_t i) {
    static const double ranges[kFeatureDim] = {8.0, 1.0, 65536.0, 1.0, 255.0,
                                               128.0, 16.0, 16.0, 1.0, 1.0};
    return ranges[i];
}

// Priority from most to least specific signature; first match wins.
const std::array<RegionLabel, 6> kPriority = {RegionLabel::Zero,   RegionLabel::Header,
                                              RegionLabel::Text,   RegionLabel::Code,
                                              RegionLabel::Packed, RegionLabel::Encrypted};

} // namespace

FeatureVector features_from_bytes(std::span<const uint8_t> window) {
    if (window.size() < 16)
        throw std::invalid_argument("feature window too short");
    const WindowStats ws = compute_window_stats(window, 0);
    FeatureVector fv;
    fv[0] = ws.shannon_bits;
    fv[1] = ws.fast_entropy;
    fv[2] = ws.chi_square;
    fv[3] = ws.hamming_fraction;
    fv[4] = ws.mean;
    fv[5] = ws.stddev;
    fv[6] = ws.kurtosis;
    fv[7] = ws.bigram_bits;
    fv[8] = kernel_pointer_density(window);
    fv[9] = linear_sweep(window).valid_byte_ratio;
    return fv;
}

FeatureVector extract_features(const MemoryDump& dump, uint64_t offset, size_t window_len) {
    if (offset + window_len > dump.size() || window_len == 0)
        throw std::out_of_range("feature window out of dump bounds");
    return features_from_bytes(dump.bytes().subspan(offset, window_len));
}

ClassifierModel calibrate(const std::vector<LabeledSample>& corpus, double k, size_t window_len) {
    std::map<RegionLabel, std::vector<FeatureVector>> by_class;
    for (const auto& sample : corpus)
        by_class[sample.label].push_back(features_from_bytes(sample.bytes));

    for (const auto& [label, fvs] : by_class)
        if (fvs.size() < kMinSamplesPerClass)
            throw std::invalid_argument(std::string("class ") + region_label_name(label) +
                                        " has " + std::to_string(fvs.size()) +
                                        " samples, need at least " +
                                        std::to_string(kMinSamplesPerClass));

    ClassifierModel model;
    model.k = k;
    model.window_len = window_len;
    for (RegionLabel label : kPriority) {
        const auto it = by_class.find(label);
        if (it == by_class.end())
            continue;
        const auto& fvs = it->second;
        ClassBox box;
        box.label = label;
        for (size_t f = 0; f < kFeatureDim; ++f) {
            double sum = 0;
            for (const auto& fv : fvs)
                sum += fv[f];
            const double mean = sum / static_cast<double>(fvs.size());
            double var = 0;
            for (const auto& fv : fvs)
                var += (fv[f] - mean) * (fv[f] - mean);
            const double sd = std::sqrt(var / static_cast<double>(fvs.size()));
            double half = k * sd;
            if (sd < 1e-12 * feature_range(f))
                half = 0.01 * feature_range(f);
            box.lo[f] = mean - half;
            box.hi[f] = mean + half;
        }
        model.boxes.push_back(box);
    }
    return model;
}

std::pair<RegionLabel, double> classify_window(const ClassifierModel& model,
                                               const FeatureVector& fv) {
    if (model.version != kFeatureVersion)
        throw std::invalid_argument("model version mismatch: " + model.version);
    for (const ClassBox& box : model.boxes) {
        bool inside = true;
        for (size_t f = 0; f < kFeatureDim && inside; ++f)
            inside = fv[f] >= box.lo[f] && fv[f] <= box.hi[f];
        if (!inside)
            continue;
        size_t central = 0;
        for (size_t f = 0; f < kFeatureDim; ++f) {
            const double quarter = (box.hi[f] - box.lo[f]) * 0.25;
            if (fv[f] > box.lo[f] + quarter && fv[f] < box.hi[f] - quarter)
                ++central;
        }
        return {box.label, static_cast<double>(central) / kFeatureDim};
    }
    return {RegionLabel::Unknown, 0.0};
}

namespace {

struct Run {
    RegionLabel label;
    size_t first = 0; // verdict index
    size_t count = 0;
};

} // namespace

std::vector<RegionVerdict> segment_regions(const std::vector<WindowVerdict>& verdicts,
                                           size_t window_len, size_t min_run) {
    std::vector<RegionVerdict> out;
    if (verdicts.empty())
        return out;
    for (size_t i = 1; i < verdicts.size(); ++i)
        if (verdicts[i].offset <= verdicts[i - 1].offset)
            throw std::invalid_argument("window verdicts not sorted by offset");

    std::vector<Run> runs;
    for (size_t i = 0; i < verdicts.size(); ++i) {
        if (!runs.empty() && runs.back().label == verdicts[i].label)
            ++runs.back().count;
        else
            runs.push_back({verdicts[i].label, i, 1});
    }

    // Absorb sub-min_run runs into the longer neighbor, interior runs
    // first, ties to the left; repeat until stable.
    const auto merge_same = [&] {
        for (size_t i = 1; i < runs.size();) {
            if (runs[i - 1].label == runs[i].label) {
                runs[i - 1].count += runs[i].count;
                runs.erase(runs.begin() + static_cast<ptrdiff_t>(i));
            } else {
                ++i;
            }
        }
    };
    while (runs.size() > 1) {
        size_t victim = runs.size();
        bool interior = false;
        for (size_t i = 0; i < runs.size(); ++i) {
            if (runs[i].count >= min_run)
                continue;
            const bool is_interior = i > 0 && i + 1 < runs.size();
            if (victim == runs.size() || (is_interior && !interior) ||
                (is_interior == interior && runs[i].count < runs[victim].count)) {
                victim = i;
                interior = is_interior;
            }
        }
        if (victim == runs.size())
            break;
        if (victim == 0)
            runs[victim].label = runs[victim + 1].label;
        else if (victim + 1 == runs.size())
            runs[victim].label = runs[victim - 1].label;
        else
            runs[victim].label = runs[victim - 1].count >= runs[victim + 1].count
                                     ? runs[victim - 1].label
                                     : runs[victim + 1].label;
        merge_same();
    }

    for (size_t r = 0; r < runs.size(); ++r) {
        const Run& run = runs[r];
        RegionVerdict rv;
        rv.start = verdicts[run.first].offset;
        const uint64_t end = r + 1 < runs.size()
                                 ? verdicts[runs[r + 1].first].offset
                                 : verdicts.back().offset + window_len;
        rv.length = end - rv.start;
        rv.label = run.label;
        std::array<double, kFeatureDim> mean{};
        double conf = 0;
        for (size_t i = run.first; i < run.first + run.count; ++i) {
            conf += verdicts[i].confidence;
            for (size_t f = 0; f < kFeatureDim; ++f)
                mean[f] += verdicts[i].features[f];
        }
        rv.confidence = conf / static_cast<double>(run.count);
        for (size_t f = 0; f < kFeatureDim; ++f)
            rv.evidence.emplace_back(kFeatureNames[f], mean[f] / static_cast<double>(run.count));
        out.push_back(std::move(rv));
    }
    return out;
}

namespace {

bool sub_window_qualifies(std::span<const uint8_t> sub, const FilterConfig& cfg) {
    std::array<uint32_t, 256> counts;
    std::memset(counts.data(), 0, sizeof(counts));
    uint8_t distinct[256];
    size_t ndistinct = 0;
    for (uint8_t b : sub) {
        if (counts[b]++ == 0)
            distinct[ndistinct++] = b;
    }
    uint32_t top = 0;
    for (size_t i = 0; i < ndistinct; ++i)
        top = std::max(top, counts[distinct[i]]);
    const double len = static_cast<double>(sub.size());
    if (static_cast<double>(top) / len >= cfg.concentration)
        return true;
    double h = 0;
    for (size_t i = 0; i < ndistinct; ++i) {
        const double p = static_cast<double>(counts[distinct[i]]) / len;
        h -= p * std::log2(p);
    }
    return h <= cfg.max_entropy_bits;
}

// One grid pass: maximal runs of qualifying sub-windows, optionally
// stretched over neighboring bytes drawn from each run's dominant
// symbols. Returns sorted, disjoint, non-adjacent spans.
std::vector<ByteSpan> filter_pass(std::span<const uint8_t> bytes, const FilterConfig& cfg) {
    const size_t n = bytes.size();
    const size_t sub = cfg.sub_window;
    const size_t nsub = (n + sub - 1) / sub;

    // Raw spans: maximal runs of qualifying sub-windows.
    std::vector<ByteSpan> raw;
    for (size_t i = 0; i < nsub; ++i) {
        const size_t s = i * sub;
        const size_t e = std::min(n, s + sub);
        if (!sub_window_qualifies(bytes.subspan(s, e - s), cfg))
            continue;
        if (!raw.empty() && raw.back().end() == s)
            raw.back().length += e - s;
        else
            raw.push_back({s, e - s});
    }

    std::vector<ByteSpan> spans;
    if (!cfg.extend_edges) {
        spans = raw;
    } else {
        // Trim grid residue: stretch each span over neighboring bytes
        // that belong to the run's dominant symbol set.
        for (size_t r = 0; r < raw.size(); ++r) {
            uint64_t start = raw[r].start;
            uint64_t end = raw[r].end();

            std::array<uint64_t, 256> counts{};
            for (uint64_t i = start; i < end; ++i)
                ++counts[bytes[i]];
            const uint64_t floor_count = std::max<uint64_t>(1, raw[r].length / 100);
            std::vector<uint8_t> symbols;
            for (int b = 0; b < 256; ++b)
                if (counts[static_cast<size_t>(b)] >= floor_count)
                    symbols.push_back(static_cast<uint8_t>(b));
            std::sort(symbols.begin(), symbols.end(), [&](uint8_t a, uint8_t b) {
                return counts[a] != counts[b] ? counts[a] > counts[b] : a < b;
            });
            if (symbols.size() > 8)
                symbols.resize(8);
            bool member[256] = {};
            for (uint8_t s : symbols)
                member[s] = true;

            const uint64_t left_floor = spans.empty() ? 0 : spans.back().end();
            for (size_t ext = 0; ext < sub && start > left_floor && member[bytes[start - 1]]; ++ext)
                --start;
            const uint64_t right_ceil = r + 1 < raw.size() ? raw[r + 1].start : n;
            for (size_t ext = 0; ext < sub && end < right_ceil && member[bytes[end]]; ++ext)
                ++end;

            if (!spans.empty() && spans.back().end() >= start)
                spans.back().length = end - spans.back().start;
            else
                spans.push_back({start, end - start});
        }
        // Extended spans touching the next raw span merge with it on the
        // next iteration via the left_floor/back-merge above; a final
        // sweep joins any remaining adjacency.
        for (size_t i = 1; i < spans.size();) {
            if (spans[i - 1].end() >= spans[i].start) {
                spans[i - 1].length = spans[i].end() - spans[i - 1].start;
                spans.erase(spans.begin() + static_cast<ptrdiff_t>(i));
            } else {
                ++i;
            }
        }
    }
    return spans;
}

} // namespace

FilterResult evasion_filter(std::span<const uint8_t> bytes, const FilterConfig& cfg) {
    if (bytes.empty())
        throw std::invalid_argument("evasion_filter on empty input");
    if (cfg.sub_window == 0)
        throw std::invalid_argument("sub_window must be positive");

    const uint64_t n = bytes.size();
    // Cutting re-chunks the survivors, which can expose new qualifying
    // sub-windows across the seams. Iterate to a fixpoint so a second
    // filter call never finds anything more to cut. `pieces` tracks the
    // survivors in input coordinates; each pass works on their bytes.
    std::vector<ByteSpan> pieces{{0, n}};
    std::vector<uint8_t> cur(bytes.begin(), bytes.end());
    while (!cur.empty()) {
        const std::vector<ByteSpan> cut = filter_pass(cur, cfg);
        if (cut.empty())
            break;
        std::vector<ByteSpan> survive;
        size_t ci = 0;
        uint64_t coff = 0; // working-space offset of the current piece
        for (const ByteSpan& p : pieces) {
            const uint64_t pend = coff + p.length;
            uint64_t local = 0;
            while (ci < cut.size() && cut[ci].start < pend) {
                const uint64_t cs = std::max(cut[ci].start, coff) - coff;
                const uint64_t ce = std::min(cut[ci].end(), pend) - coff;
                if (cs > local)
                    survive.push_back({p.start + local, cs - local});
                local = ce;
                if (cut[ci].end() <= pend)
                    ++ci;
                else
                    break; // cut continues into the next piece
            }
            if (local < p.length)
                survive.push_back({p.start + local, p.length - local});
            coff = pend;
        }
        pieces = std::move(survive);
        cur.clear();
        for (const ByteSpan& p : pieces)
            cur.insert(cur.end(), bytes.begin() + static_cast<ptrdiff_t>(p.start),
                       bytes.begin() + static_cast<ptrdiff_t>(p.end()));
    }

    FilterResult out;
    out.filtered = std::move(cur);
    uint64_t at = 0;
    for (const ByteSpan& p : pieces) {
        if (p.start > at)
            out.excised.push_back({at, p.start - at});
        at = p.end();
    }
    if (at < n)
        out.excised.push_back({at, n - at});
    return out;
}

RobustEntropy robust_entropy(std::span<const uint8_t> bytes, const FilterConfig& cfg) {
    if (bytes.empty())
        throw std::invalid_argument("robust_entropy on empty input");
    RobustEntropy out;
    out.raw_shannon = shannon_entropy(byte_histogram(bytes));
    const FilterResult fr = evasion_filter(bytes, cfg);
    out.filtered_shannon =
        fr.filtered.empty() ? 0.0 : shannon_entropy(byte_histogram(fr.filtered));
    out.excised_fraction =
        1.0 - static_cast<double>(fr.filtered.size()) / static_cast<double>(bytes.size());
    return out;
}

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

std::string serialize_model(const ClassifierModel& model) {
    std::ostringstream out;
    out << "mdsa-model " << model.version << ' ' << model.window_len << ' '
        << format_double(model.k) << '\n';
    for (const ClassBox& box : model.boxes)
        for (size_t f = 0; f < kFeatureDim; ++f)
            out << region_label_name(box.label) << ' ' << kFeatureNames[f] << ' '
                << format_double(box.lo[f]) << ' ' << format_double(box.hi[f]) << '\n';
    return out.str();
}

ClassifierModel parse_model(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    ClassifierModel model;
    bool have_header = false;
    std::vector<std::array<bool, kFeatureDim>> seen;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        std::istringstream ls(line);
        std::vector<std::string> toks;
        for (std::string t; ls >> t;)
            toks.push_back(t);
        if (toks.empty())
            continue;
        const std::string where = "model line " + std::to_string(lineno);
        if (!have_header) {
            if (toks.size() != 4 || toks[0] != "mdsa-model")
                throw std::invalid_argument(where + ": expected `mdsa-model version window k`");
            model.version = toks[1];
            model.window_len = std::stoul(toks[2]);
            model.k = std::strtod(toks[3].c_str(), nullptr);
            have_header = true;
            continue;
        }
        if (toks.size() != 4)
            throw std::invalid_argument(where + ": expected `class feature lo hi`");
        const RegionLabel label = region_label_from_name(toks[0]);
        size_t f = kFeatureDim;
        for (size_t i = 0; i < kFeatureDim; ++i)
            if (toks[1] == kFeatureNames[i])
                f = i;
        if (f == kFeatureDim)
            throw std::invalid_argument(where + ": unknown feature '" + toks[1] + "'");

        size_t bi = model.boxes.size();
        for (size_t i = 0; i < model.boxes.size(); ++i)
            if (model.boxes[i].label == label)
                bi = i;
        if (bi == model.boxes.size()) {
            model.boxes.push_back({});
            model.boxes.back().label = label;
            seen.push_back({});
        }
        model.boxes[bi].lo[f] = std::strtod(toks[2].c_str(), nullptr);
        model.boxes[bi].hi[f] = std::strtod(toks[3].c_str(), nullptr);
        seen[bi][f] = true;
    }
    if (!have_header)
        throw std::invalid_argument("model file has no header line");
    for (size_t i = 0; i < model.boxes.size(); ++i)
        for (size_t f = 0; f < kFeatureDim; ++f)
            if (!seen[i][f])
                throw std::invalid_argument(
                    std::string("model class ") + region_label_name(model.boxes[i].label) +
                    " is missing feature " + kFeatureNames[f]);
    return model;
}

ClassifierModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open model file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_model(buf.str());
}

void save_model(const ClassifierModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write model file: " + path);
    out << serialize_model(model);
}

std::vector<LabeledSample> synthetic_corpus(uint64_t seed, size_t per_class, size_t window_len) {
    if (window_len < 16)
        throw std::invalid_argument("window_len too small for features");
    const size_t stride = window_len > 4 ? window_len - 4 : 1;
    const size_t stream_len = stride * (per_class - 1) + window_len;
    std::vector<LabeledSample> corpus;
    corpus.reserve(per_class * 6);

    const auto slice_stream = [&](const std::vector<uint8_t>& stream, RegionLabel label) {
        for (size_t i = 0; i < per_class; ++i) {
            const size_t off = i * stride;
            corpus.push_back(
                {std::vector<uint8_t>(stream.begin() + static_cast<ptrdiff_t>(off),
                                      stream.begin() + static_cast<ptrdiff_t>(off + window_len)),
                 label});
        }
    };

    for (size_t i = 0; i < per_class; ++i)
        corpus.push_back({std::vector<uint8_t>(window_len, 0), RegionLabel::Zero});

    slice_stream(generate_payload(stream_len, PayloadKind::Text, seed ^ 0x74657874ULL),
                 RegionLabel::Text);
    slice_stream(generate_payload(stream_len, PayloadKind::Code, seed ^ 0x636f6465ULL),
                 RegionLabel::Code);

    for (size_t i = 0; i < per_class; ++i) {
        const auto body = generate_payload(64, PayloadKind::Code, seed + i);
        auto image = make_pe_image(body, (seed ^ 0x68647273ULL) + i);
        image.resize(std::min(image.size(), window_len));
        if (image.size() < window_len)
            image.resize(window_len, 0);
        corpus.push_back({std::move(image), RegionLabel::Header});
    }

    {
        // Light packer model: per-sample single-byte XOR of code. The
        // histogram shape survives (entropy stays in the code band,
        // clear of Encrypted) while decodability is destroyed, so the
        // higher-priority Code box rejects these windows.
        const std::vector<uint8_t> packed =
            generate_payload(stream_len, PayloadKind::Code, seed ^ 0x7061636bULL);
        Rng krng(seed ^ 0x6b657973ULL);
        for (size_t i = 0; i < per_class; ++i) {
            const size_t off = i * stride;
            std::vector<uint8_t> window(packed.begin() + static_cast<ptrdiff_t>(off),
                                        packed.begin() + static_cast<ptrdiff_t>(off + window_len));
            const uint8_t key = static_cast<uint8_t>(krng.range(1, 255));
            for (uint8_t& b : window)
                b ^= key;
            corpus.push_back({std::move(window), RegionLabel::Packed});
        }
    }

    slice_stream(generate_payload(stream_len, PayloadKind::Random, seed ^ 0x726e6421ULL),
                 RegionLabel::Encrypted);
    return corpus;
}

ClassifierModel default_model() {
    static const ClassifierModel model =
        calibrate(synthetic_corpus(kDefaultCorpusSeed, 200, 256), 3.0, 256);
    return model;
}

} // namespace mdsa
