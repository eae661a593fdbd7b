#include "mdsa/evasion.hpp"
#include "mdsa/image.hpp"
#include "mdsa/pipeline.hpp"
#include "mdsa/report.hpp"
#include "mdsa/service.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"

namespace {

void write_file(const std::string& path, std::span<const uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write " + path);
    out << text;
}

struct ScanArgs {
    std::string input;
    std::string manifest_path;
    std::string model_path;
    std::string signatures_path;
    std::string report_path = "report.json";
    std::string csv_path = "windows.csv";
    uint64_t base = 0;
    std::string detector = "filtered";
    mdsa::ScanConfig cfg;
};

int cmd_scan(const ScanArgs& args) {
    mdsa::ScanConfig cfg = args.cfg;
    cfg.detector = mdsa::detector_mode_from_name(args.detector);
    if (!args.model_path.empty())
        cfg.model = mdsa::load_model(args.model_path);
    if (!args.signatures_path.empty())
        cfg.signature_set = mdsa::load_signatures(args.signatures_path);

    const mdsa::MemoryDump dump = mdsa::load_dump(args.input, args.base);
    mdsa::RegionManifest manifest;
    if (!args.manifest_path.empty())
        manifest = mdsa::load_manifest(args.manifest_path);

    const mdsa::ScanReport rep = mdsa::run_scan(dump, manifest, cfg);
    mdsa::save_report(rep, args.report_path);
    write_file(args.csv_path, mdsa::windows_csv(rep));

    size_t hidden = 0;
    for (const auto& r : rep.crossview) {
        if (!r.hidden.value_or(false))
            continue;
        ++hidden;
        std::printf("hidden %s 0x%llx..0x%llx confidence %.3f\n",
                    mdsa::region_label_name(r.label),
                    static_cast<unsigned long long>(r.start),
                    static_cast<unsigned long long>(r.start + r.length), r.confidence);
    }
    std::printf("dump %s bytes %llu windows %zu matches %zu regions %zu hidden %zu\n",
                rep.dump_hash.c_str(), static_cast<unsigned long long>(rep.dump_len),
                rep.windows.size(), rep.matches.size(), rep.regions.size(), hidden);
    return hidden > 0 ? 2 : 0;
}

struct GenerateArgs {
    std::string preset = "clean";
    std::string recipe_path;
    uint64_t seed = 1;
    std::string output = "dump.bin";
    std::string manifest_out;
    std::string truth_out;
};

int cmd_generate(const GenerateArgs& args) {
    const mdsa::DumpRecipe recipe = args.recipe_path.empty()
                                        ? mdsa::preset_recipe(args.preset, args.seed)
                                        : mdsa::load_recipe(args.recipe_path);
    const mdsa::BuiltDump built = mdsa::build_dump(recipe);
    write_file(args.output, built.dump.bytes());
    if (!args.manifest_out.empty())
        mdsa::save_manifest(built.manifest, args.manifest_out);
    if (!args.truth_out.empty()) {
        std::string text = "# kind name start length extra\n";
        for (const auto& img : built.images) {
            text += "image " + img.name + " " + std::to_string(img.start) + " " +
                    std::to_string(img.length) + " declared=" +
                    (img.declared ? std::string("1") : std::string("0")) + "\n";
            for (const auto& s : img.truth.payload_spans)
                text += "payload " + img.name + " " + std::to_string(s.start) + " " +
                        std::to_string(s.length) + "\n";
            for (const auto& s : img.truth.inserted_spans)
                text += "inserted " + img.name + " " + std::to_string(s.start) + " " +
                        std::to_string(s.length) + "\n";
        }
        write_file(args.truth_out, text);
    }
    std::printf("wrote %s (%llu bytes, %zu images)\n", args.output.c_str(),
                static_cast<unsigned long long>(built.dump.size()), built.images.size());
    return 0;
}

struct CalibrateArgs {
    uint64_t seed = mdsa::kDefaultCorpusSeed;
    size_t per_class = 200;
    size_t window_len = 256;
    double k = 3.0;
    std::string output = "model.txt";
};

int cmd_calibrate(const CalibrateArgs& args) {
    const auto corpus = mdsa::synthetic_corpus(args.seed, args.per_class, args.window_len);
    const mdsa::ClassifierModel model = mdsa::calibrate(corpus, args.k, args.window_len);
    mdsa::save_model(model, args.output);
    std::printf("calibrated %zu classes from %zu samples -> %s\n", model.boxes.size(),
                corpus.size(), args.output.c_str());
    return 0;
}

struct CrossviewArgs {
    std::string report_path;
    std::string manifest_path;
};

int cmd_crossview(const CrossviewArgs& args) {
    const mdsa::ScanReport rep = mdsa::load_report(args.report_path);
    mdsa::RegionManifest manifest;
    if (!args.manifest_path.empty())
        manifest = mdsa::load_manifest(args.manifest_path);
    const auto verdicts =
        mdsa::cross_view(rep.regions, manifest, rep.dump_len, rep.hidden_confidence);
    size_t hidden = 0;
    for (const auto& r : verdicts) {
        const bool h = r.hidden.value_or(false);
        hidden += h ? 1 : 0;
        std::printf("%s %s 0x%llx..0x%llx confidence %.3f\n", h ? "hidden" : "covered",
                    mdsa::region_label_name(r.label),
                    static_cast<unsigned long long>(r.start),
                    static_cast<unsigned long long>(r.start + r.length), r.confidence);
    }
    return hidden > 0 ? 2 : 0;
}

struct VisualizeArgs {
    std::string input;
    std::string mode = "heatmap";
    std::string metric = "shannon";
    size_t width = 256;
    unsigned order = 9;
    size_t window_len = 256;
    size_t stride = 252;
    std::string output = "out.ppm";
};

int cmd_visualize(const VisualizeArgs& args) {
    const mdsa::MemoryDump dump = mdsa::load_dump(args.input, 0);
    mdsa::Image img;
    if (args.mode == "heatmap") {
        mdsa::WindowConfig cfg{args.window_len, args.stride};
        const auto series =
            mdsa::entropy_series(dump, cfg, mdsa::metric_from_name(args.metric));
        img = mdsa::render_heatmap(series, args.width);
    } else if (args.mode == "byteplot") {
        img = mdsa::render_byteplot(dump.bytes(), args.width);
    } else if (args.mode == "hilbert") {
        img = mdsa::render_hilbert(dump.bytes(), args.order);
    } else {
        throw std::invalid_argument("unknown mode: " + args.mode);
    }
    mdsa::save_ppm(img, args.output);
    std::printf("wrote %s (%zux%zu)\n", args.output.c_str(), img.width, img.height);
    return 0;
}

struct BenchArgs {
    std::string preset = "clean";
    std::vector<size_t> workers = {1};
    uint64_t seed = 1;
    std::string output;
};

int cmd_bench(const BenchArgs& args) {
    const auto rows = mdsa::bench(args.preset, args.workers, args.seed);
    const std::string csv = mdsa::bench_csv(rows);
    if (!args.output.empty())
        write_file(args.output, csv);
    std::fputs(csv.c_str(), stdout);
    return 0;
}

std::atomic<bool> g_interrupted{false};

struct ServeArgs {
    mdsa::ServeOptions opts;
};

int cmd_serve(const ServeArgs& args) {
    mdsa::ScanServer server(args.opts);
    std::signal(SIGINT, [](int) { g_interrupted.store(true); });
    std::signal(SIGTERM, [](int) { g_interrupted.store(true); });
    server.start();
    std::printf("listening on port %u (max %zu concurrent)\n", server.port(),
                args.opts.max_concurrent);
    std::fflush(stdout);
    while (!g_interrupted.load())
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"memory-dump scan toolkit"};
    app.require_subcommand(1);
    app.set_config("--config")->description("key=value config file; flags override");

    ScanArgs scan;
    auto* s = app.add_subcommand("scan", "analyze a dump for hidden executable code");
    s->add_option("input", scan.input, "dump file")->required();
    s->add_option("--base", scan.base, "load address of the dump");
    s->add_option("--manifest", scan.manifest_path, "declared-region manifest file");
    s->add_option("--model", scan.model_path, "classifier model file");
    s->add_option("--signatures", scan.signatures_path, "signature definition file");
    s->add_option("--report", scan.report_path, "report output path");
    s->add_option("--csv", scan.csv_path, "window stats csv output path");
    s->add_option("--window", scan.cfg.window.window_len, "window length");
    s->add_option("--stride", scan.cfg.window.stride, "window stride");
    s->add_option("--workers", scan.cfg.workers, "worker threads");
    s->add_option("--detector", scan.detector, "filtered or baseline");
    s->add_option("--min-run", scan.cfg.min_run, "min windows per region");
    s->add_option("--hidden-confidence", scan.cfg.hidden_confidence,
                  "confidence for packed/encrypted hidden verdicts");
    s->add_option("--sub-window", scan.cfg.filter.sub_window, "filter sub-window");
    s->add_option("--concentration", scan.cfg.filter.concentration,
                  "filter top-byte concentration");
    s->add_option("--bridge-limit", scan.cfg.bridge_limit,
                  "max excised gap bridged inside one region");

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "build a synthetic dump with ground truth");
    g->add_option("--preset", gen.preset, "clean, zeus or highstem");
    g->add_option("--recipe", gen.recipe_path, "recipe file (overrides preset)");
    g->add_option("--seed", gen.seed, "generation seed");
    g->add_option("--output", gen.output, "dump output path");
    g->add_option("--manifest-out", gen.manifest_out, "write declared manifest here");
    g->add_option("--truth-out", gen.truth_out, "write ground truth spans here");

    CalibrateArgs cal;
    auto* c = app.add_subcommand("calibrate", "fit a classifier model on a seeded corpus");
    c->add_option("--seed", cal.seed, "corpus seed");
    c->add_option("--per-class", cal.per_class, "samples per class");
    c->add_option("--window", cal.window_len, "window length");
    c->add_option("--k", cal.k, "interval half-width in stddevs");
    c->add_option("--output", cal.output, "model output path");

    CrossviewArgs cv;
    auto* x = app.add_subcommand("crossview", "diff report regions against a manifest");
    x->add_option("report", cv.report_path, "report.json from a scan")->required();
    x->add_option("--manifest", cv.manifest_path, "declared-region manifest file");

    VisualizeArgs vis;
    auto* v = app.add_subcommand("visualize", "render a dump as an image");
    v->add_option("input", vis.input, "dump file")->required();
    v->add_option("--mode", vis.mode, "heatmap, byteplot or hilbert");
    v->add_option("--metric", vis.metric, "heatmap metric");
    v->add_option("--width", vis.width, "image width in pixels");
    v->add_option("--order", vis.order, "hilbert curve order");
    v->add_option("--window", vis.window_len, "heatmap window length");
    v->add_option("--stride", vis.stride, "heatmap window stride");
    v->add_option("--output", vis.output, "image output path (ppm)");

    BenchArgs ben;
    auto* b = app.add_subcommand("bench", "measure scan throughput per stage");
    b->add_option("--preset", ben.preset, "dump preset to measure on");
    b->add_option("--workers", ben.workers, "worker counts")->delimiter(',');
    b->add_option("--seed", ben.seed, "generation seed");
    b->add_option("--output", ben.output, "also write the csv here");

    ServeArgs srv;
    auto* e = app.add_subcommand("serve", "framed socket scan service");
    e->add_option("--bind", srv.opts.bind_address, "bind address");
    e->add_option("--port", srv.opts.port, "tcp port (0 = ephemeral)");
    e->add_option("--max-concurrent", srv.opts.max_concurrent, "handler threads");
    e->add_option("--log", srv.opts.request_log, "append-only request log file");
    e->add_option("--report-dir", srv.opts.report_dir, "persist each report JSON here");

    try {
        app.parse(argc, argv);
        if (s->parsed())
            return cmd_scan(scan);
        if (g->parsed())
            return cmd_generate(gen);
        if (c->parsed())
            return cmd_calibrate(cal);
        if (x->parsed())
            return cmd_crossview(cv);
        if (v->parsed())
            return cmd_visualize(vis);
        if (b->parsed())
            return cmd_bench(ben);
        if (e->parsed())
            return cmd_serve(srv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 1;
    } catch (const std::exception& err) {
        std::fprintf(stderr, "error: %s\n", err.what());
        return 1;
    }
    return 1;
}
