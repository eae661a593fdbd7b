#include "mdsa/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace mdsa {

namespace {

// ordered_json keeps object key order, so parse -> serialize is a
// byte-level fixpoint (evidence maps preserve feature order).
using json = nlohmann::ordered_json;

// Doubles are emitted at 12 significant digits; re-parsing and
// re-emitting such a value reproduces the same text, which makes the
// serialization a fixpoint under parse -> serialize.
std::string fmt(double v) {
    if (!std::isfinite(v))
        throw std::invalid_argument("report contains a non-finite number");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\r': out += "\\r"; break;
        case '\t': out += "\\t"; break;
        default:
            if (static_cast<unsigned char>(c) < 0x20) {
                char buf[8];
                std::snprintf(buf, sizeof(buf), "\\u%04x", c);
                out += buf;
            } else {
                out += c;
            }
        }
    }
    return out;
}

class Writer {
public:
    void key(const char* k) {
        sep();
        out_ += '"';
        out_ += k;
        out_ += "\":";
        fresh_ = true;
    }
    void str(const std::string& v) {
        sep();
        out_ += '"';
        out_ += escape(v);
        out_ += '"';
    }
    void num(double v) {
        sep();
        out_ += fmt(v);
    }
    void num(uint64_t v) {
        sep();
        out_ += std::to_string(v);
    }
    void boolean(bool v) {
        sep();
        out_ += v ? "true" : "false";
    }
    void begin(char c) {
        sep();
        out_ += c;
        fresh_ = true;
    }
    void end(char c) {
        flush_newline();
        out_ += c;
        fresh_ = false;
    }
    // Line break before whatever comes next (after its comma).
    void newline() { pending_nl_ = true; }
    std::string take() {
        flush_newline();
        return std::move(out_);
    }

private:
    void sep() {
        if (!fresh_)
            out_ += ',';
        flush_newline();
        fresh_ = false;
    }
    void flush_newline() {
        if (pending_nl_) {
            out_ += '\n';
            pending_nl_ = false;
        }
    }
    std::string out_;
    bool fresh_ = true;
    bool pending_nl_ = false;
};

void write_region(Writer& w, const RegionVerdict& r) {
    w.begin('{');
    w.key("start");
    w.num(r.start);
    w.key("length");
    w.num(r.length);
    w.key("label");
    w.str(region_label_name(r.label));
    w.key("confidence");
    w.num(r.confidence);
    if (r.hidden.has_value()) {
        w.key("hidden");
        w.boolean(*r.hidden);
    }
    w.key("evidence");
    w.begin('{');
    for (const auto& [name, value] : r.evidence) {
        w.key(name.c_str());
        w.num(value);
    }
    w.end('}');
    w.end('}');
}

RegionVerdict parse_region(const json& j) {
    RegionVerdict r;
    r.start = j.at("start").get<uint64_t>();
    r.length = j.at("length").get<uint64_t>();
    r.label = region_label_from_name(j.at("label").get<std::string>());
    r.confidence = j.at("confidence").get<double>();
    if (j.contains("hidden"))
        r.hidden = j.at("hidden").get<bool>();
    for (const auto& [name, value] : j.at("evidence").items())
        r.evidence.emplace_back(name, value.get<double>());
    return r;
}

} // namespace

std::string serialize_report(const ScanReport& rep, bool include_execution) {
    Writer w;
    w.begin('{');
    w.newline();
    w.key("toolkit_version");
    w.str(rep.toolkit_version);
    w.newline();

    w.key("dump");
    w.begin('{');
    w.key("source_id");
    w.str(rep.source_id);
    w.key("base_address");
    w.num(rep.base_address);
    w.key("length");
    w.num(rep.dump_len);
    w.key("hash");
    w.str(rep.dump_hash);
    w.end('}');
    w.newline();

    w.key("config");
    w.begin('{');
    w.key("window_len");
    w.num(static_cast<uint64_t>(rep.window.window_len));
    w.key("stride");
    w.num(static_cast<uint64_t>(rep.window.stride));
    w.key("detector");
    w.str(rep.detector);
    w.key("min_run");
    w.num(static_cast<uint64_t>(rep.min_run));
    w.key("hidden_confidence");
    w.num(rep.hidden_confidence);
    w.key("filter");
    w.begin('{');
    w.key("sub_window");
    w.num(static_cast<uint64_t>(rep.filter.sub_window));
    w.key("concentration");
    w.num(rep.filter.concentration);
    w.key("max_entropy_bits");
    w.num(rep.filter.max_entropy_bits);
    w.key("extend_edges");
    w.boolean(rep.filter.extend_edges);
    w.end('}');
    w.key("bridge_limit");
    w.num(rep.bridge_limit);
    w.end('}');
    w.newline();

    w.key("excised_fraction");
    w.num(rep.excised_fraction);
    w.newline();

    w.key("windows");
    w.begin('[');
    for (size_t i = 0; i < rep.windows.size(); ++i) {
        const WindowStats& s = rep.windows[i];
        w.newline();
        w.begin('{');
        w.key("offset");
        w.num(s.offset);
        w.key("shannon");
        w.num(s.shannon_bits);
        w.key("fast_entropy");
        w.num(s.fast_entropy);
        w.key("chi2");
        w.num(s.chi_square);
        w.key("hamming");
        w.num(s.hamming_fraction);
        w.key("mean");
        w.num(s.mean);
        w.key("stddev");
        w.num(s.stddev);
        w.key("kurtosis");
        w.num(s.kurtosis);
        w.key("bigram");
        w.num(s.bigram_bits);
        w.key("degenerate");
        w.boolean(s.degenerate);
        w.end('}');
    }
    w.newline();
    w.end(']');
    w.newline();

    w.key("matches");
    w.begin('[');
    for (const Match& m : rep.matches) {
        w.newline();
        w.begin('{');
        w.key("id");
        w.str(m.signature_id);
        w.key("offset");
        w.num(m.offset);
        w.key("len");
        w.num(static_cast<uint64_t>(m.matched_len));
        w.end('}');
    }
    w.newline();
    w.end(']');
    w.newline();

    w.key("regions");
    w.begin('[');
    for (const RegionVerdict& r : rep.regions) {
        w.newline();
        write_region(w, r);
    }
    w.newline();
    w.end(']');
    w.newline();

    w.key("crossview");
    w.begin('[');
    for (const RegionVerdict& r : rep.crossview) {
        w.newline();
        write_region(w, r);
    }
    w.newline();
    w.end(']');
    w.newline();

    if (include_execution) {
        w.key("execution");
        w.begin('{');
        w.key("workers");
        w.num(static_cast<uint64_t>(rep.workers));
        w.key("timings");
        w.begin('[');
        for (const StageTiming& t : rep.timings) {
            w.begin('{');
            w.key("stage");
            w.str(t.stage);
            w.key("seconds");
            w.num(t.seconds);
            w.end('}');
        }
        w.end(']');
        w.end('}');
        w.newline();
    }
    w.end('}');
    w.newline();
    return w.take();
}

ScanReport parse_report(const std::string& text) {
    const json j = json::parse(text);
    ScanReport rep;
    rep.toolkit_version = j.at("toolkit_version").get<std::string>();

    const json& dump = j.at("dump");
    rep.source_id = dump.at("source_id").get<std::string>();
    rep.base_address = dump.at("base_address").get<uint64_t>();
    rep.dump_len = dump.at("length").get<uint64_t>();
    rep.dump_hash = dump.at("hash").get<std::string>();

    const json& cfg = j.at("config");
    rep.window.window_len = cfg.at("window_len").get<size_t>();
    rep.window.stride = cfg.at("stride").get<size_t>();
    rep.detector = cfg.at("detector").get<std::string>();
    rep.min_run = cfg.at("min_run").get<size_t>();
    rep.hidden_confidence = cfg.at("hidden_confidence").get<double>();
    const json& f = cfg.at("filter");
    rep.filter.sub_window = f.at("sub_window").get<size_t>();
    rep.filter.concentration = f.at("concentration").get<double>();
    rep.filter.max_entropy_bits = f.at("max_entropy_bits").get<double>();
    rep.filter.extend_edges = f.at("extend_edges").get<bool>();
    rep.bridge_limit = cfg.at("bridge_limit").get<uint64_t>();

    rep.excised_fraction = j.at("excised_fraction").get<double>();

    for (const json& s : j.at("windows")) {
        WindowStats ws;
        ws.offset = s.at("offset").get<uint64_t>();
        ws.shannon_bits = s.at("shannon").get<double>();
        ws.fast_entropy = s.at("fast_entropy").get<double>();
        ws.chi_square = s.at("chi2").get<double>();
        ws.hamming_fraction = s.at("hamming").get<double>();
        ws.mean = s.at("mean").get<double>();
        ws.stddev = s.at("stddev").get<double>();
        ws.kurtosis = s.at("kurtosis").get<double>();
        ws.bigram_bits = s.at("bigram").get<double>();
        ws.degenerate = s.at("degenerate").get<bool>();
        rep.windows.push_back(ws);
    }
    for (const json& m : j.at("matches")) {
        Match match;
        match.signature_id = m.at("id").get<std::string>();
        match.offset = m.at("offset").get<uint64_t>();
        match.matched_len = m.at("len").get<size_t>();
        rep.matches.push_back(match);
    }
    for (const json& r : j.at("regions"))
        rep.regions.push_back(parse_region(r));
    for (const json& r : j.at("crossview"))
        rep.crossview.push_back(parse_region(r));

    if (j.contains("execution")) {
        const json& ex = j.at("execution");
        rep.workers = ex.at("workers").get<size_t>();
        for (const json& t : ex.at("timings"))
            rep.timings.push_back({t.at("stage").get<std::string>(),
                                   t.at("seconds").get<double>()});
    }
    return rep;
}

ScanReport load_report(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open report: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_report(buf.str());
}

void save_report(const ScanReport& rep, const std::string& path, bool include_execution) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write report: " + path);
    out << serialize_report(rep, include_execution);
}

std::string canonical_report(const ScanReport& rep) {
    return serialize_report(rep, false);
}

std::string report_hash(const ScanReport& rep) {
    const std::string canon = canonical_report(rep);
    return fnv1a64_hex(
        std::span(reinterpret_cast<const uint8_t*>(canon.data()), canon.size()));
}

std::string windows_csv(const ScanReport& rep) {
    std::string out = "offset,shannon,fast_entropy,chi2,hamming,mean,stddev,kurtosis,bigram\n";
    for (const WindowStats& s : rep.windows) {
        out += std::to_string(s.offset);
        for (double v : {s.shannon_bits, s.fast_entropy, s.chi_square, s.hamming_fraction,
                         s.mean, s.stddev, s.kurtosis, s.bigram_bits}) {
            out += ',';
            out += fmt(v);
        }
        out += '\n';
    }
    return out;
}

std::string serialize_scan_request_config(const ScanRequestConfig& cfg) {
    Writer w;
    w.begin('{');
    w.key("window_len");
    w.num(static_cast<uint64_t>(cfg.scan.window.window_len));
    w.key("stride");
    w.num(static_cast<uint64_t>(cfg.scan.window.stride));
    w.key("workers");
    w.num(static_cast<uint64_t>(cfg.scan.workers));
    w.key("detector");
    w.str(detector_mode_name(cfg.scan.detector));
    w.key("signatures");
    w.boolean(cfg.scan.signatures);
    w.key("classify");
    w.boolean(cfg.scan.classify);
    w.key("crossview");
    w.boolean(cfg.scan.crossview);
    w.key("min_run");
    w.num(static_cast<uint64_t>(cfg.scan.min_run));
    w.key("hidden_confidence");
    w.num(cfg.scan.hidden_confidence);
    w.key("filter");
    w.begin('{');
    w.key("sub_window");
    w.num(static_cast<uint64_t>(cfg.scan.filter.sub_window));
    w.key("concentration");
    w.num(cfg.scan.filter.concentration);
    w.key("max_entropy_bits");
    w.num(cfg.scan.filter.max_entropy_bits);
    w.key("extend_edges");
    w.boolean(cfg.scan.filter.extend_edges);
    w.end('}');
    w.key("bridge_limit");
    w.num(cfg.scan.bridge_limit);
    w.key("manifest");
    w.begin('[');
    for (const auto& e : cfg.manifest.entries) {
        w.begin('{');
        w.key("name");
        w.str(e.name);
        w.key("start");
        w.num(e.start);
        w.key("length");
        w.num(e.length);
        w.key("kind");
        w.str(e.kind);
        w.end('}');
    }
    w.end(']');
    w.end('}');
    w.newline();
    return w.take();
}

ScanRequestConfig parse_scan_request_config(const std::string& text) {
    const json j = json::parse(text);
    ScanRequestConfig cfg;
    if (j.contains("window_len"))
        cfg.scan.window.window_len = j.at("window_len").get<size_t>();
    if (j.contains("stride"))
        cfg.scan.window.stride = j.at("stride").get<size_t>();
    if (j.contains("workers"))
        cfg.scan.workers = j.at("workers").get<size_t>();
    if (j.contains("detector"))
        cfg.scan.detector = detector_mode_from_name(j.at("detector").get<std::string>());
    if (j.contains("signatures"))
        cfg.scan.signatures = j.at("signatures").get<bool>();
    if (j.contains("classify"))
        cfg.scan.classify = j.at("classify").get<bool>();
    if (j.contains("crossview"))
        cfg.scan.crossview = j.at("crossview").get<bool>();
    if (j.contains("min_run"))
        cfg.scan.min_run = j.at("min_run").get<size_t>();
    if (j.contains("hidden_confidence"))
        cfg.scan.hidden_confidence = j.at("hidden_confidence").get<double>();
    if (j.contains("filter")) {
        const json& f = j.at("filter");
        if (f.contains("sub_window"))
            cfg.scan.filter.sub_window = f.at("sub_window").get<size_t>();
        if (f.contains("concentration"))
            cfg.scan.filter.concentration = f.at("concentration").get<double>();
        if (f.contains("max_entropy_bits"))
            cfg.scan.filter.max_entropy_bits = f.at("max_entropy_bits").get<double>();
        if (f.contains("extend_edges"))
            cfg.scan.filter.extend_edges = f.at("extend_edges").get<bool>();
    }
    if (j.contains("bridge_limit"))
        cfg.scan.bridge_limit = j.at("bridge_limit").get<uint64_t>();
    if (j.contains("manifest")) {
        for (const json& e : j.at("manifest")) {
            RegionManifest::Entry entry;
            entry.name = e.at("name").get<std::string>();
            entry.start = e.at("start").get<uint64_t>();
            entry.length = e.at("length").get<uint64_t>();
            entry.kind = e.value("kind", "module");
            cfg.manifest.entries.push_back(std::move(entry));
        }
    }
    return cfg;
}

} // namespace mdsa
