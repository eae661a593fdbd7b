#pragma once

#include "mdsa/pipeline.hpp"

#include <string>

namespace mdsa {

// Reports serialize to JSON with pinned key order and numbers rounded
// to 12 significant digits, so equal reports yield equal bytes. The
// canonical form (include_execution = false) further drops wall-clock
// timings and the worker count; it is what worker-count invariance and
// the service response are measured on.
std::string serialize_report(const ScanReport& rep, bool include_execution = true);
ScanReport parse_report(const std::string& text);
ScanReport load_report(const std::string& path);
void save_report(const ScanReport& rep, const std::string& path,
                 bool include_execution = true);

std::string canonical_report(const ScanReport& rep);
std::string report_hash(const ScanReport& rep); // fnv1a-64 hex of the canonical form

// One row per window: offset,shannon,fast_entropy,chi2,hamming,mean,
// stddev,kurtosis,bigram
std::string windows_csv(const ScanReport& rep);

// Scan settings as they travel over the wire or sit next to a dump:
// pipeline config plus the declared manifest, one JSON object.
struct ScanRequestConfig {
    ScanConfig scan;
    RegionManifest manifest;
};

std::string serialize_scan_request_config(const ScanRequestConfig& cfg);
ScanRequestConfig parse_scan_request_config(const std::string& text);

} // namespace mdsa
