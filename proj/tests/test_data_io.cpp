#include <cmath>
#include <fstream>
#include <queue>

#include "doctest.h"
#include "scribble/data_io.hpp"
#include "scribble/error.hpp"
#include "support.hpp"

#ifdef SCRIBBLE_HAVE_PNG
#include <png.h>
#endif

using namespace scribble;
using namespace scribble::data;
using losses::Label;

namespace {

Raster random_raster(int c, int h, int w, RngState& rng) {
    Raster r{c, h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(c) * h * w)};
    for (auto& v : r.pixels) v = static_cast<std::uint8_t>(rng.below(256));
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Upper 1% point of chi-square with k degrees of freedom (Wilson-Hilferty).
double chi2_critical_99(double k) {
    const double z = 2.3263478740408408;
    const double t = 1.0 - 2.0 / (9.0 * k) + z * std::sqrt(2.0 / (9.0 * k));
    return k * t * t * t;
}

// 4-connected components of a binary mask.
std::vector<std::vector<std::pair<int, int>>> components(const Grid& m) {
    const int H = m.dim(0), W = m.dim(1);
    std::vector<int> seen(static_cast<std::size_t>(H) * W, 0);
    std::vector<std::vector<std::pair<int, int>>> out;
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            if (m.at(i, j) == 0 || seen[i * W + j]) continue;
            std::vector<std::pair<int, int>> comp;
            std::queue<std::pair<int, int>> q;
            q.push({i, j});
            seen[i * W + j] = 1;
            while (!q.empty()) {
                auto [y, x] = q.front();
                q.pop();
                comp.emplace_back(y, x);
                for (auto [dy, dx] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
                    const int ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= H || nx < 0 || nx >= W || m.at(ny, nx) == 0 || seen[ny * W + nx]) continue;
                    seen[ny * W + nx] = 1;
                    q.push({ny, nx});
                }
            }
            out.push_back(std::move(comp));
        }
    return out;
}

}  // namespace

TEST_CASE("PNM rasters round trip bit-exactly") {
    auto dir = scribble::testing::scratch_dir("pnm");
    RngState rng(1);
    for (int c : {1, 3}) {
        Raster r = random_raster(c, 7, 11, rng);
        const fs::path p = dir / (c == 1 ? "a.pgm" : "a.ppm");
        write_raster(p, r);
        CHECK(read_raster(p) == r);
    }
}

TEST_CASE("PNM header comments and reduced maxval are accepted; deep files are not") {
    auto dir = scribble::testing::scratch_dir("pnm_hdr");
    {
        std::ofstream out(dir / "c.pgm", std::ios::binary);
        out << "P5\n# a comment\n3 1\n# another\n15\n";
        out.put(0).put(15).put(5);
    }
    Raster r = read_raster(dir / "c.pgm");
    CHECK(r.width == 3);
    CHECK(r.pixels == std::vector<std::uint8_t>{0, 255, 85});
    {
        std::ofstream out(dir / "deep.pgm", std::ios::binary);
        out << "P5\n1 1\n65535\n";
        out.put(0).put(0);
    }
    CHECK_THROWS_AS(read_raster(dir / "deep.pgm"), IoError);
    {
        std::ofstream out(dir / "short.ppm", std::ios::binary);
        out << "P6\n4 4\n255\n";
        out.put(1);
    }
    CHECK_THROWS_AS(read_raster(dir / "short.ppm"), IoError);
    CHECK_THROWS_AS(read_raster(dir / "nope.pgm"), IoError);
    {
        std::ofstream(dir / "text.pgm") << "hello";
    }
    CHECK_THROWS_AS(read_raster(dir / "text.pgm"), IoError);
    CHECK_THROWS_AS(write_raster(dir / "x.bmp", Raster{1, 1, 1, {0}}), IoError);
}

#ifdef SCRIBBLE_HAVE_PNG
TEST_CASE("PNG rasters: round trip, white image, 16-bit rejection") {
    auto dir = scribble::testing::scratch_dir("png");
    RngState rng(2);
    for (int c : {1, 3}) {
        Raster r = random_raster(c, 5, 9, rng);
        write_raster(dir / "a.png", r);
        CHECK(read_raster(dir / "a.png") == r);
    }
    Raster white{3, 4, 6, std::vector<std::uint8_t>(72, 255)};
    write_raster(dir / "white.png", white);
    Grid g = raster_to_grid(read_raster(dir / "white.png"));
    CHECK(g.shape() == Shape{3, 4, 6});
    for (double v : g.data()) CHECK(v == 1.0);

    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = 2;
    img.height = 2;
    img.format = PNG_FORMAT_LINEAR_Y;
    std::vector<png_uint_16> deep(4, 1000);
    REQUIRE(png_image_write_to_file(&img, (dir / "deep.png").c_str(), 0, deep.data(), 0, nullptr));
    try {
        read_raster(dir / "deep.png");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("16-bit") != std::string::npos);
    }
}
#endif

TEST_CASE("scribble grey values decode to three labels") {
    Raster r{1, 1, 4, {255, 0, 128, 254}};
    auto m = raster_to_scribble(r);
    CHECK(m.at(0, 0) == Label::target);
    CHECK(m.at(0, 1) == Label::background);
    CHECK(m.at(0, 2) == Label::unknown);
    CHECK(m.at(0, 3) == Label::unknown);

    auto gray = raster_to_scribble(Raster{1, 3, 3, std::vector<std::uint8_t>(9, 128)});
    CHECK(gray.annotated() == 0);
    CHECK_THROWS_AS(gray.require_both_classes("all grey"), ArgumentError);
    CHECK_THROWS_AS(raster_to_scribble(Raster{3, 1, 1, {0, 0, 0}}), IoError);
}

TEST_CASE("samples round trip through save and load") {
    auto dir = scribble::testing::scratch_dir("sample");
    RngState rng(3);
    Sample s = generate_scene(SynthConfig{}, rng, "s0");
    // a target line and a background line drawn by hand
    s.scribble = losses::ScribbleMap(32, 32);
    for (int j = 4; j < 20; ++j) s.scribble.at(5, j) = Label::target;
    for (int i = 10; i < 30; ++i) s.scribble.at(i, 25) = Label::background;
    save_sample(s, dir / "i.ppm", dir / "s.pgm", dir / "g.pgm");
    Sample t = load_sample(dir / "i.ppm", dir / "s.pgm", dir / "g.pgm", "s0");
    CHECK(t.image == s.image);
    CHECK(t.scribble == s.scribble);
    REQUIRE(t.gt);
    CHECK(*t.gt == *s.gt);
    CHECK(t.id == "s0");
    CHECK(load_sample(dir / "i.ppm", dir / "s.pgm").id == "i");

    write_raster(dir / "small.pgm", Raster{1, 4, 4, std::vector<std::uint8_t>(16, 0)});
    try {
        load_sample(dir / "i.ppm", dir / "small.pgm");
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("size mismatch") != std::string::npos);
    }
}

TEST_CASE("manifest parsing") {
    auto dir = scribble::testing::scratch_dir("manifest");
    auto entries = generate_synthetic(3, SynthConfig{}, RngState(4), dir);
    auto back = read_manifest(dir / "manifest.tsv");
    REQUIRE(back.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(fs::equivalent(back[k].image, entries[k].image));
        CHECK(back[k].id == entries[k].id);
        REQUIRE(back[k].gt);
    }
    {
        std::ofstream out(dir / "hand.tsv");
        out << "# comment line\n\nimages/scene_001.ppm\tscribbles/scene_001.pgm\t-\tb  # trailing\n"
            << "images/scene_000.ppm\tscribbles/scene_000.pgm\n";
    }
    auto hand = read_manifest(dir / "hand.tsv");
    REQUIRE(hand.size() == 2);
    CHECK(hand[0].id == "b");
    CHECK_FALSE(hand[0].gt);
    CHECK(hand[1].id == "scene_000");
    CHECK(load_dataset(dir / "hand.tsv").size() == 2);

    {
        std::ofstream(dir / "dup.tsv") << "images/scene_000.ppm\tscribbles/scene_000.pgm\t-\tx\nimages/scene_001.ppm\tscribbles/scene_001.pgm\t-\tx\n";
    }
    CHECK_THROWS_AS(read_manifest(dir / "dup.tsv"), IoError);
    {
        std::ofstream(dir / "missing.tsv") << "images/none.ppm\tscribbles/scene_000.pgm\n";
    }
    CHECK_THROWS_AS(read_manifest(dir / "missing.tsv"), IoError);
    {
        std::ofstream(dir / "cols.tsv") << "just-one-column\n";
    }
    CHECK_THROWS_AS(read_manifest(dir / "cols.tsv"), IoError);
}

TEST_CASE("synthetic scenes are deterministic") {
    auto a = scribble::testing::scratch_dir("synth_a");
    auto b = scribble::testing::scratch_dir("synth_b");
    auto ea = generate_synthetic(4, SynthConfig{}, RngState(7), a);
    auto eb = generate_synthetic(4, SynthConfig{}, RngState(7), b);
    for (std::size_t k = 0; k < ea.size(); ++k) {
        CHECK(slurp(ea[k].image) == slurp(eb[k].image));
        CHECK(slurp(ea[k].scribble) == slurp(eb[k].scribble));
        CHECK(slurp(*ea[k].gt) == slurp(*eb[k].gt));
    }
    auto ec = generate_synthetic(4, SynthConfig{}, RngState(8), scribble::testing::scratch_dir("synth_c"));
    CHECK(slurp(ea[0].image) != slurp(ec[0].image));
}

TEST_CASE("synthetic scribbles agree with the ground truth and blobs are separate") {
    RngState rng(9);
    double min_frac = 1, max_frac = 0;
    for (int k = 0; k < 100; ++k) {
        Sample s = generate_scene(SynthConfig{}, rng, "x");
        const Grid& gt = *s.gt;
        double covered = 0;
        for (double v : gt.data()) {
            CHECK((v == 0.0 || v == 1.0));
            covered += v;
        }
        min_frac = std::min(min_frac, covered / gt.size());
        max_frac = std::max(max_frac, covered / gt.size());
        for (int i = 0; i < 32; ++i)
            for (int j = 0; j < 32; ++j) {
                if (s.scribble.at(i, j) == Label::target) CHECK(gt.at(i, j) == 1.0);
                if (s.scribble.at(i, j) == Label::background) CHECK(gt.at(i, j) == 0.0);
            }
        // one target line per blob: every component carries target pixels
        auto comps = components(gt);
        CHECK(comps.size() >= 1);
        CHECK(comps.size() <= 3);
        for (const auto& comp : comps) {
            bool marked = false;
            for (auto [i, j] : comp) marked = marked || s.scribble.at(i, j) == Label::target;
            CHECK(marked);
        }
        CHECK(s.scribble.count(Label::background) > 0);
    }
    CHECK(min_frac >= 0.05);
    CHECK(max_frac <= 0.35);
}

TEST_CASE("random crop") {
    RngState rng(10);
    Sample s = generate_scene(SynthConfig{}, rng, "c");
    Sample same = random_crop(s, 32, rng);
    CHECK(same.image == s.image);
    CHECK(same.scribble == s.scribble);
    CHECK(*same.gt == *s.gt);

    RngState r1(11), r2(11);
    Sample c1 = random_crop(s, 16, r1), c2 = random_crop(s, 16, r2);
    CHECK(c1.image == c2.image);
    CHECK(c1.image.shape() == Shape{3, 16, 16});
    CHECK(c1.gt->shape() == Shape{16, 16});
    CHECK_THROWS_AS(random_crop(s, 33, rng), ArgumentError);

    const CropWindow w{5, 9};
    Sample c = crop_sample(s, w, 8);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) {
            CHECK(c.image.at(2, i, j) == s.image.at(2, i + 5, j + 9));
            CHECK(c.scribble.at(i, j) == s.scribble.at(i + 5, j + 9));
        }
}

TEST_CASE("crop corners are uniform (chi-square, p > 0.01)") {
    RngState rng(12);
    const int cells = 33;
    std::vector<int> counts(cells * cells, 0);
    const int draws = 10000;
    for (int k = 0; k < draws; ++k) {
        CropWindow w = draw_crop(64, 64, 32, rng);
        REQUIRE(w.top >= 0);
        REQUIRE(w.top <= 32);
        ++counts[w.top * cells + w.left];
    }
    const double expected = static_cast<double>(draws) / counts.size();
    double chi2 = 0;
    for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
    CHECK(chi2 < chi2_critical_99(counts.size() - 1));
}
