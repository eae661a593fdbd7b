#include "mdsa/evasion.hpp"

#include "mdsa/classify.hpp"
#include "mdsa/disasm.hpp"
#include "mdsa/rng.hpp"
#include "mdsa/signature.hpp"
#include "mdsa/stats.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <algorithm>
#include <stdexcept>

using namespace mdsa;

TEST_CASE("payload generation per kind") {
    const auto code = generate_payload(4096, PayloadKind::Code, 7);
    REQUIRE(code.size() == 4096);
    CHECK(linear_sweep(code).valid_byte_ratio == 1.0);
    CHECK(prolog_epilog_density(code) > 1.0); // one prolog per chunk

    const auto noise = generate_payload(4096, PayloadKind::Random, 7);
    CHECK(shannon_entropy(byte_histogram(noise)) >= 7.5);

    const auto text = generate_payload(4096, PayloadKind::Text, 7);
    for (uint8_t b : text) {
        const bool printable = (b >= 'a' && b <= 'z') || (b >= 'A' && b <= 'Z') || b == ' ' ||
                               b == '.' || b == ',' || b == '\n';
        REQUIRE(printable);
    }
    CHECK(shannon_entropy(byte_histogram(text)) < 5.0);

    // Deterministic in the seed, distinct across seeds.
    CHECK(generate_payload(1024, PayloadKind::Code, 3) ==
          generate_payload(1024, PayloadKind::Code, 3));
    CHECK(generate_payload(1024, PayloadKind::Code, 3) !=
          generate_payload(1024, PayloadKind::Code, 4));

    CHECK_THROWS_AS(generate_payload(63, PayloadKind::Code, 1), std::invalid_argument);

    CHECK(payload_kind_from_name("code") == PayloadKind::Code);
    CHECK(payload_kind_name(PayloadKind::Random) == "random");
    CHECK_THROWS_AS(payload_kind_from_name("blob"), std::invalid_argument);
}

TEST_CASE("pe image wraps a body behind a findable header") {
    const auto body = generate_payload(4096, PayloadKind::Code, 11);
    const auto image = make_pe_image(body, 11);
    REQUIRE(image.size() == kPeHeaderSize + body.size());
    CHECK(std::equal(body.begin(), body.end(), image.begin() + kPeHeaderSize));

    const auto candidates = pe_header_scan(image);
    REQUIRE(candidates.size() == 1);
    CHECK(candidates[0].offset == 0);
    CHECK(candidates[0].pe_offset == 0x80);
    CHECK(candidates[0].machine == 0x014C);
    CHECK(candidates[0].section_count == 2);

    const auto stubs = dos_stub_scan(image);
    REQUIRE(stubs.size() == 1);
    CHECK(stubs[0].offset == 0x4E);
}

TEST_CASE("evasion with no blocks is the identity") {
    const auto payload = generate_payload(2048, PayloadKind::Random, 13);
    const EvadedImage out = apply_evasion(payload, EvasionSpec{});
    CHECK(out.bytes == payload);
    REQUIRE(out.truth.payload_spans.size() == 1);
    CHECK(out.truth.payload_spans[0].start == 0);
    CHECK(out.truth.payload_spans[0].length == payload.size());
    CHECK(out.truth.inserted_spans.empty());
    CHECK(out.truth.original_entropy_bits == out.truth.evaded_entropy_bits);
}

TEST_CASE("ground truth spans partition the evaded image") {
    Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        const auto payload = generate_payload(1024 + rng.uniform(8192), PayloadKind::Random,
                                              rng.next_u64());
        EvasionSpec spec;
        spec.insert_block_count = rng.uniform(40);
        spec.block_len_min = 16;
        spec.block_len_max = 512;
        spec.block_alphabet_size = 1 + rng.uniform(4);
        spec.rng_seed = rng.next_u64();
        const EvadedImage out = apply_evasion(payload, spec);

        // Reassembling the payload spans reproduces the input exactly.
        std::vector<uint8_t> rebuilt;
        for (const auto& s : out.truth.payload_spans)
            rebuilt.insert(rebuilt.end(),
                           out.bytes.begin() + static_cast<ptrdiff_t>(s.start),
                           out.bytes.begin() + static_cast<ptrdiff_t>(s.start + s.length));
        CHECK(rebuilt == payload);

        // Payload + inserted spans tile the output with no gap or overlap.
        std::vector<ByteSpan> all = out.truth.payload_spans;
        all.insert(all.end(), out.truth.inserted_spans.begin(), out.truth.inserted_spans.end());
        std::sort(all.begin(), all.end(),
                  [](const ByteSpan& a, const ByteSpan& b) { return a.start < b.start; });
        uint64_t cursor = 0;
        for (const auto& s : all) {
            CHECK(s.start == cursor);
            CHECK(s.length > 0);
            cursor = s.end();
        }
        CHECK(cursor == out.bytes.size());

        // Inserted bytes count matches the spans.
        uint64_t inserted = 0;
        for (const auto& s : out.truth.inserted_spans)
            inserted += s.length;
        CHECK(out.bytes.size() == payload.size() + inserted);
    }
}

TEST_CASE("dilution halves whole-image entropy") {
    const auto payload = generate_payload(8192, PayloadKind::Random, 17);
    const double original = shannon_entropy(byte_histogram(payload));
    REQUIRE(original >= 5.0);

    EvasionSpec spec;
    spec.insert_block_count = 56; // ~7x payload volume in zero blocks
    spec.block_len_min = 1024;
    spec.block_len_max = 1024;
    spec.block_alphabet_size = 1;
    spec.rng_seed = 19;
    const EvadedImage out = apply_evasion(payload, spec);

    CHECK(out.truth.original_entropy_bits == doctest::Approx(original));
    CHECK(out.truth.evaded_entropy_bits <= original / 2);

    const ConstraintReport rep = verify_constraints(out);
    CHECK(rep.size_ok);
    CHECK(rep.entropy_ok);
    CHECK(rep.entropy_ratio == doctest::Approx(out.truth.evaded_entropy_bits / original));

    // The filter undoes the dilution: recovered entropy near the original.
    const RobustEntropy re = robust_entropy(out.bytes);
    CHECK(re.filtered_shannon >= original * 0.9);
}

TEST_CASE("header wipe defeats the pe scan") {
    const auto body = generate_payload(4096, PayloadKind::Code, 29);
    const auto image = make_pe_image(body, 29);
    REQUIRE(pe_header_scan(image).size() == 1);

    EvasionSpec spec;
    spec.wipe_pe_header = true;
    const EvadedImage out = apply_evasion(image, spec);
    CHECK(out.bytes.size() == image.size());
    CHECK(pe_header_scan(out.bytes).empty());
    for (size_t i = 0; i < kPeHeaderSize; ++i)
        REQUIRE(out.bytes[i] == 0);
    CHECK(std::equal(out.bytes.begin() + kPeHeaderSize, out.bytes.end(),
                     image.begin() + kPeHeaderSize));
}

TEST_CASE("xor transform applies before spans are recorded") {
    const auto payload = generate_payload(512, PayloadKind::Text, 31);
    EvasionSpec spec;
    spec.xor_key = 0x5A;
    const EvadedImage out = apply_evasion(payload, spec);
    REQUIRE(out.bytes.size() == payload.size());
    for (size_t i = 0; i < payload.size(); ++i)
        REQUIRE(out.bytes[i] == (payload[i] ^ 0x5A));
}

TEST_CASE("evasion determinism and validation") {
    const auto payload = generate_payload(4096, PayloadKind::Random, 37);
    EvasionSpec spec;
    spec.insert_block_count = 10;
    spec.block_len_min = 64;
    spec.block_len_max = 256;
    spec.block_alphabet_size = 2;
    spec.rng_seed = 41;
    const EvadedImage a = apply_evasion(payload, spec);
    const EvadedImage b = apply_evasion(payload, spec);
    CHECK(a.bytes == b.bytes);
    spec.rng_seed = 42;
    CHECK(apply_evasion(payload, spec).bytes != a.bytes);

    EvasionSpec bad;
    bad.block_len_min = 10;
    bad.block_len_max = 5;
    CHECK_THROWS_AS(apply_evasion(payload, bad), std::invalid_argument);
    bad = {};
    bad.insert_block_count = 1;
    bad.block_len_max = 0;
    CHECK_THROWS_AS(apply_evasion(payload, bad), std::invalid_argument);
    bad = {};
    bad.block_alphabet_size = 0;
    CHECK_THROWS_AS(apply_evasion(payload, bad), std::invalid_argument);
    bad = {};
    bad.insert_block_count = 1;
    bad.block_len_min = bad.block_len_max = 16;
    CHECK_THROWS_AS(apply_evasion({}, bad), std::invalid_argument);
}

TEST_CASE("constraint report flags violations") {
    EvadedImage big;
    big.bytes.resize(11 * 1024 * 1024);
    big.truth.original_entropy_bits = 8.0;
    big.truth.evaded_entropy_bits = 3.0;
    ConstraintReport rep = verify_constraints(big);
    CHECK(!rep.size_ok);
    CHECK(rep.size_bytes == big.bytes.size());
    CHECK(rep.entropy_ok); // 3/8 <= 0.5

    EvadedImage loud;
    loud.bytes.resize(1024);
    loud.truth.original_entropy_bits = 8.0;
    loud.truth.evaded_entropy_bits = 4.8;
    rep = verify_constraints(loud);
    CHECK(rep.size_ok);
    CHECK(!rep.entropy_ok); // 0.6 > 0.5

    EvadedImage fine;
    fine.bytes.resize(1024);
    fine.truth.original_entropy_bits = 7.9;
    fine.truth.evaded_entropy_bits = 1.6;
    rep = verify_constraints(fine);
    CHECK(rep.size_ok);
    CHECK(rep.entropy_ok);
}

TEST_CASE("build_dump places images and reports truth in dump coordinates") {
    const DumpRecipe recipe = preset_recipe("zeus", 5);
    const BuiltDump built = build_dump(recipe);
    CHECK(built.dump.size() == 32ull * 1024 * 1024);

    REQUIRE(built.images.size() == 2);
    CHECK(built.images[0].name == "svc_core");
    CHECK(built.images[0].declared);
    CHECK(built.images[0].start == 4ull * 1024 * 1024);
    CHECK(built.images[1].name == "ghost");
    CHECK(!built.images[1].declared);
    CHECK(built.images[1].start == 16ull * 1024 * 1024);

    // Manifest lists only declared images.
    REQUIRE(built.manifest.entries.size() == 1);
    CHECK(built.manifest.entries[0].name == "svc_core");
    CHECK(built.manifest.entries[0].start == built.images[0].start);
    CHECK(built.manifest.entries[0].length == built.images[0].length);

    // Ghost truth spans sit inside the ghost placement.
    const PlacedImage& ghost = built.images[1];
    REQUIRE(!ghost.truth.payload_spans.empty());
    REQUIRE(!ghost.truth.inserted_spans.empty());
    for (const auto& s : ghost.truth.payload_spans) {
        CHECK(s.start >= ghost.start);
        CHECK(s.end() <= ghost.start + ghost.length);
    }

    // The placed ghost bytes really are in the dump where truth says.
    uint64_t payload_bytes = 0;
    for (const auto& s : ghost.truth.payload_spans)
        payload_bytes += s.length;
    CHECK(payload_bytes == 256 * 1024 + kPeHeaderSize); // wrapped payload, header wiped in place
}

TEST_CASE("build_dump is deterministic") {
    const DumpRecipe recipe = preset_recipe("clean", 9);
    const BuiltDump a = build_dump(recipe);
    const BuiltDump b = build_dump(recipe);
    CHECK(fnv1a64(a.dump.bytes()) == fnv1a64(b.dump.bytes()));

    DumpRecipe other = recipe;
    other.seed = 10;
    CHECK(fnv1a64(build_dump(other).dump.bytes()) != fnv1a64(a.dump.bytes()));
}

TEST_CASE("build_dump rejects bad placements") {
    DumpRecipe recipe;
    recipe.total_size = 1024 * 1024;
    ImageRecipe img;
    img.name = "a";
    img.payload_size = 4096;
    img.placement = 0;
    img.pe_wrap = false;
    recipe.images.push_back(img);
    img.name = "b";
    img.placement = 1024; // overlaps a's [0, 4096)
    recipe.images.push_back(img);
    CHECK_THROWS_AS(build_dump(recipe), std::invalid_argument);

    recipe.images.pop_back();
    img.name = "c";
    img.placement = recipe.total_size - 100; // falls off the end
    recipe.images.push_back(img);
    CHECK_THROWS_AS(build_dump(recipe), std::invalid_argument);

    DumpRecipe empty;
    CHECK_THROWS_AS(build_dump(empty), std::invalid_argument); // zero total_size

    DumpRecipe thin;
    thin.total_size = 4096;
    ImageRecipe small;
    small.payload_size = 32;
    thin.images.push_back(small);
    CHECK_THROWS_AS(build_dump(thin), std::invalid_argument);
}

TEST_CASE("recipe text round-trip") {
    const DumpRecipe recipe = preset_recipe("highstem", 123);
    const std::string text = serialize_recipe(recipe);
    const DumpRecipe back = parse_recipe(text);
    CHECK(back.total_size == recipe.total_size);
    CHECK(back.filler == recipe.filler);
    CHECK(back.seed == recipe.seed);
    REQUIRE(back.images.size() == recipe.images.size());
    for (size_t i = 0; i < recipe.images.size(); ++i) {
        const ImageRecipe& want = recipe.images[i];
        const ImageRecipe& got = back.images[i];
        CHECK(got.name == want.name);
        CHECK(got.kind == want.kind);
        CHECK(got.payload_size == want.payload_size);
        CHECK(got.placement == want.placement);
        CHECK(got.declared == want.declared);
        CHECK(got.pe_wrap == want.pe_wrap);
        CHECK(got.evasion.insert_block_count == want.evasion.insert_block_count);
        CHECK(got.evasion.block_len_min == want.evasion.block_len_min);
        CHECK(got.evasion.block_len_max == want.evasion.block_len_max);
        CHECK(got.evasion.block_alphabet_size == want.evasion.block_alphabet_size);
        CHECK(got.evasion.wipe_pe_header == want.evasion.wipe_pe_header);
        CHECK(got.evasion.xor_key == want.evasion.xor_key);
    }
    CHECK(serialize_recipe(back) == text); // byte fixpoint

    CHECK_THROWS_AS(parse_recipe("total_size zero\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_recipe("total_size 100\nbudget 5\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_recipe("total_size 100\nimage name\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_recipe("total_size 100\nimage what=9\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse_recipe("# only a comment\n"), std::invalid_argument); // size 0
    // Hex numbers parse.
    const DumpRecipe hexed = parse_recipe("total_size 0x1000\nseed 0x7\n");
    CHECK(hexed.total_size == 4096);
    CHECK(hexed.seed == 7);
}

TEST_CASE("presets cover the advertised scenarios") {
    CHECK(preset_recipe("clean", 1).total_size == 16ull * 1024 * 1024);
    CHECK(preset_recipe("zeus", 1).total_size == 32ull * 1024 * 1024);
    const DumpRecipe hs = preset_recipe("highstem", 1);
    CHECK(hs.total_size == 64ull * 1024 * 1024);
    REQUIRE(hs.images.size() == 2);
    CHECK(hs.images[1].evasion.block_alphabet_size == 3);
    CHECK(hs.images[1].evasion.wipe_pe_header);
    CHECK(!hs.images[1].declared);
    CHECK_THROWS_AS(preset_recipe("ordinary", 1), std::invalid_argument);
}

TEST_CASE("evasion hides payload windows from the code entropy band") {
    // At least 80% of scan windows that overlap hidden payload bytes fall
    // below the calibrated lower entropy bound for code.
    const BuiltDump built = build_dump(preset_recipe("highstem", 77));
    const PlacedImage& ghost = built.images[1];
    REQUIRE(!ghost.declared);

    const ClassifierModel model = default_model();
    double code_lo = 0;
    for (const auto& box : model.boxes)
        if (box.label == RegionLabel::Code)
            code_lo = box.lo[0];
    REQUIRE(code_lo > 4.0); // sanity: code sits in a high-entropy band

    const size_t win = 256;
    const auto bytes = built.dump.bytes();
    size_t overlapping = 0, below = 0;
    size_t span_idx = 0;
    for (uint64_t off = ghost.start; off + win <= ghost.start + ghost.length; off += win) {
        while (span_idx < ghost.truth.payload_spans.size() &&
               ghost.truth.payload_spans[span_idx].end() <= off)
            ++span_idx;
        const bool overlaps = span_idx < ghost.truth.payload_spans.size() &&
                              ghost.truth.payload_spans[span_idx].start < off + win;
        if (!overlaps)
            continue;
        ++overlapping;
        if (shannon_entropy(byte_histogram(bytes.subspan(off, win))) < code_lo)
            ++below;
    }
    REQUIRE(overlapping > 100);
    CHECK(static_cast<double>(below) >= 0.8 * static_cast<double>(overlapping));
}
