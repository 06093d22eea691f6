#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "data/dataset.hpp"

using namespace dfkd;
using namespace dfkd::data;

namespace {

std::string fresh_dir(const std::string& name) {
    namespace fs = std::filesystem;
    fs::path p = fs::temp_directory_path() / "dfkd_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

} // namespace

TEST_CASE("data: raster files round-trip byte for byte") {
    std::string dir = fresh_dir("raster_roundtrip");

    RasterImage rgb;
    rgb.width = 5;
    rgb.height = 3;
    rgb.channels = 3;
    for (int i = 0; i < 45; ++i) rgb.pixels.push_back(static_cast<uint8_t>((i * 37 + 11) % 256));
    write_raster(dir + "/a.ppm", rgb);
    RasterImage back = read_raster(dir + "/a.ppm");
    CHECK(back.width == 5);
    CHECK(back.height == 3);
    CHECK(back.channels == 3);
    CHECK(back.pixels == rgb.pixels);

    RasterImage gray;
    gray.width = 4;
    gray.height = 2;
    gray.channels = 1;
    for (int i = 0; i < 8; ++i) gray.pixels.push_back(static_cast<uint8_t>(255 - i * 30));
    write_raster(dir + "/b.pgm", gray);
    back = read_raster(dir + "/b.pgm");
    CHECK(back.channels == 1);
    CHECK(back.pixels == gray.pixels);

    // No stray temp file is left behind.
    CHECK(!std::filesystem::exists(dir + "/a.ppm.tmp"));
}

TEST_CASE("data: raster header validation") {
    std::string dir = fresh_dir("raster_bad");

    CHECK_THROWS_WITH_AS(read_raster(dir + "/absent.ppm"),
                         doctest::Contains("cannot open"), std::runtime_error);

    {
        std::ofstream os(dir + "/magic.ppm", std::ios::binary);
        os << "P7\n2 2\n255\n" << std::string(12, 'x');
    }
    CHECK_THROWS_WITH_AS(read_raster(dir + "/magic.ppm"),
                         doctest::Contains("unsupported magic"), std::runtime_error);

    {
        std::ofstream os(dir + "/depth.ppm", std::ios::binary);
        os << "P6\n2 2\n65535\n" << std::string(24, 'x');
    }
    CHECK_THROWS_WITH_AS(read_raster(dir + "/depth.ppm"),
                         doctest::Contains("maxval 255"), std::runtime_error);

    {
        std::ofstream os(dir + "/short.ppm", std::ios::binary);
        os << "P6\n4 4\n255\n" << std::string(10, 'x');
    }
    CHECK_THROWS_WITH_AS(read_raster(dir + "/short.ppm"),
                         doctest::Contains("truncated"), std::runtime_error);

    // Comments anywhere in the header are legal.
    {
        std::ofstream os(dir + "/comment.pgm", std::ios::binary);
        os << "P5\n# made by hand\n2 # width\n1\n255\n";
        os.put(static_cast<char>(7));
        os.put(static_cast<char>(250));
    }
    RasterImage img = read_raster(dir + "/comment.pgm");
    CHECK(img.width == 2);
    CHECK(img.height == 1);
    CHECK(img.pixels[0] == 7);
    CHECK(img.pixels[1] == 250);
}

TEST_CASE("data: pixel quantization anchors and inverse") {
    Tensor chw = Tensor::from_vector({1, 1, 5}, {-1.0, 0.0, 1.0, -1.7, 2.3});
    RasterImage img = raster_from_chw(chw);
    CHECK(img.pixels[0] == 0);   // -1 maps to 0
    CHECK(img.pixels[1] == 128); // 0 maps to 128, the half rounds away from zero
    CHECK(img.pixels[2] == 255); // +1 maps to 255
    CHECK(img.pixels[3] == 0);   // clamped below
    CHECK(img.pixels[4] == 255); // clamped above

    Tensor backv = chw_from_raster(img);
    CHECK(backv[0] == -1.0); // exact at the ends
    CHECK(backv[2] == 1.0);

    // Every byte value survives a float round trip unchanged.
    RasterImage all;
    all.width = 256;
    all.height = 1;
    all.channels = 1;
    for (int p = 0; p < 256; ++p) all.pixels.push_back(static_cast<uint8_t>(p));
    RasterImage again = raster_from_chw(chw_from_raster(all));
    CHECK(again.pixels == all.pixels);

    // Quantization error of an arbitrary value is at most half a bin.
    Tensor v = Tensor::from_vector({1, 1, 1}, {0.291736});
    double rec = chw_from_raster(raster_from_chw(v))[0];
    CHECK(std::abs(rec - v[0]) <= 0.5 / 127.5 + 1e-12);

    CHECK_THROWS_WITH_AS(raster_from_chw(Tensor({2, 2, 2})),
                         doctest::Contains("1 or 3 channels"), std::runtime_error);
}

TEST_CASE("data: bilinear resize hand oracles") {
    // Identity when the size already matches.
    Tensor x = Tensor::from_vector({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tensor same = resize_bilinear(x, 2, 2);
    for (int64_t i = 0; i < 4; ++i) CHECK(same[i] == x[i]);

    // Doubling a 2-pixel row: half-pixel centers land at -0.25, 0.25, 0.75,
    // 1.25 in source coordinates, clamped at the edges.
    Tensor row = Tensor::from_vector({1, 1, 2}, {0.0, 1.0});
    Tensor up = resize_bilinear(row, 1, 4);
    CHECK(up[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(up[1] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(up[2] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(up[3] == doctest::Approx(1.0).epsilon(1e-12));

    // Halving a 4-pixel ramp averages neighbor pairs.
    Tensor ramp = Tensor::from_vector({1, 1, 4}, {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0});
    Tensor down = resize_bilinear(ramp, 1, 2);
    CHECK(down[0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(down[1] == doctest::Approx(5.0 / 6.0).epsilon(1e-12));

    // A constant image stays constant at any size.
    Tensor flat({3, 7, 5}, 0.37);
    Tensor r = resize_bilinear(flat, 13, 4);
    CHECK(r.size(0) == 3);
    CHECK(r.size(1) == 13);
    CHECK(r.size(2) == 4);
    for (int64_t i = 0; i < r.numel(); ++i) CHECK(r[i] == doctest::Approx(0.37).epsilon(1e-12));

    // Interpolation never leaves the input range.
    Rng rng(5);
    Tensor noisy({3, 20, 30});
    rng.fill_uniform(noisy, -1.0, 1.0);
    Tensor shrunk = resize_bilinear(noisy, 128, 128);
    CHECK(shrunk.size(1) == 128);
    CHECK(shrunk.size(2) == 128);
    double lo = 1e9, hi = -1e9;
    for (int64_t i = 0; i < noisy.numel(); ++i) {
        lo = std::min(lo, noisy[i]);
        hi = std::max(hi, noisy[i]);
    }
    for (int64_t i = 0; i < shrunk.numel(); ++i) {
        CHECK(shrunk[i] >= lo - 1e-12);
        CHECK(shrunk[i] <= hi + 1e-12);
    }

    CHECK_THROWS_WITH_AS(resize_bilinear(x, 0, 4), doctest::Contains("positive"), std::runtime_error);
}

TEST_CASE("data: slice_sample copies one image") {
    Tensor batch({3, 2, 2, 2});
    for (int64_t i = 0; i < batch.numel(); ++i) batch[i] = static_cast<double>(i);
    Tensor s = slice_sample(batch, 1);
    CHECK(s.rank() == 3);
    CHECK(s.size(0) == 2);
    for (int64_t i = 0; i < 8; ++i) CHECK(s[i] == static_cast<double>(8 + i));
    CHECK_THROWS_WITH_AS(slice_sample(batch, 3), doctest::Contains("out of range"), std::runtime_error);
}

TEST_CASE("data: image tree round trip") {
    std::string root = fresh_dir("tree_roundtrip");
    Dataset d = make_synthetic(3, 4, 8, 8, 99);
    write_image_tree(d, root);

    Dataset back = load_image_tree(root, 8, 8);
    CHECK(back.count() == 12);
    CHECK(back.classes() == 3);
    CHECK(back.class_names == d.class_names);
    CHECK(back.labels == d.labels);
    // Same size in and out leaves quantization as the only loss.
    for (int64_t i = 0; i < d.images.numel(); ++i)
        CHECK(std::abs(back.images[i] - d.images[i]) <= 0.5 / 127.5 + 1e-12);
}

TEST_CASE("data: image tree failures are itemized") {
    std::string root = fresh_dir("tree_bad");
    Dataset d = make_synthetic(2, 2, 8, 8, 7);
    write_image_tree(d, root);

    // One corrupt file fails the whole load and is named in the message.
    {
        std::ofstream os(root + "/class_01/img_00001.ppm", std::ios::binary | std::ios::trunc);
        os << "P6\n8 8\n255\nway too short";
    }
    CHECK_THROWS_WITH_AS(load_image_tree(root, 8, 8),
                         doctest::Contains("1 file(s) failed to ingest"), std::runtime_error);
    CHECK_THROWS_WITH_AS(load_image_tree(root, 8, 8),
                         doctest::Contains("img_00001.ppm"), std::runtime_error);

    CHECK_THROWS_WITH_AS(load_image_tree(root + "/nowhere", 8, 8),
                         doctest::Contains("is not a directory"), std::runtime_error);

    std::string empty = fresh_dir("tree_empty");
    CHECK_THROWS_WITH_AS(load_image_tree(empty, 8, 8),
                         doctest::Contains("holds no class directories"), std::runtime_error);

    // A class directory without any raster file is reported too.
    std::string hollow = fresh_dir("tree_hollow");
    std::filesystem::create_directories(hollow + "/class_00");
    CHECK_THROWS_WITH_AS(load_image_tree(hollow, 8, 8),
                         doctest::Contains("no raster images"), std::runtime_error);
}

TEST_CASE("data: image tree resizes on load") {
    std::string root = fresh_dir("tree_resize");
    Dataset d = make_synthetic(2, 3, 12, 10, 3);
    write_image_tree(d, root);
    Dataset back = load_image_tree(root, 8, 8);
    CHECK(back.images.size(1) == 3);
    CHECK(back.images.size(2) == 8);
    CHECK(back.images.size(3) == 8);
    CHECK(back.count() == 6);
}

TEST_CASE("data: stratified split is exact, disjoint, and seed-stable") {
    // First pixel of every image encodes its index, which makes membership
    // trackable across the split.
    int classes = 4, per_class = 10;
    Dataset d = make_synthetic(classes, per_class, 4, 4, 11);
    for (int i = 0; i < d.count(); ++i)
        d.images.data()[static_cast<int64_t>(i) * 48] = static_cast<double>(i);

    Dataset train, test;
    split_stratified(d, 0.8, 42, train, test);
    CHECK(train.count() == 32);
    CHECK(test.count() == 8);
    CHECK(train.class_names == d.class_names);

    std::map<int, int> train_per_class, test_per_class;
    for (int y : train.labels) ++train_per_class[y];
    for (int y : test.labels) ++test_per_class[y];
    for (int c = 0; c < classes; ++c) {
        CHECK(train_per_class[c] == 8);
        CHECK(test_per_class[c] == 2);
    }

    std::set<int> seen;
    for (int i = 0; i < train.count(); ++i)
        seen.insert(static_cast<int>(train.images.data()[static_cast<int64_t>(i) * 48]));
    for (int i = 0; i < test.count(); ++i)
        seen.insert(static_cast<int>(test.images.data()[static_cast<int64_t>(i) * 48]));
    CHECK(static_cast<int>(seen.size()) == d.count()); // disjoint and exhaustive

    // The same seed reproduces the exact membership; labels stay aligned.
    Dataset train2, test2;
    split_stratified(d, 0.8, 42, train2, test2);
    CHECK(train2.labels == train.labels);
    for (int64_t i = 0; i < train.images.numel(); ++i) CHECK(train2.images[i] == train.images[i]);
    for (int i = 0; i < train.count(); ++i) {
        int original = static_cast<int>(train.images.data()[static_cast<int64_t>(i) * 48]);
        CHECK(train.labels[static_cast<size_t>(i)] == d.labels[static_cast<size_t>(original)]);
    }

    // A different seed picks a different membership.
    Dataset train3, test3;
    split_stratified(d, 0.8, 43, train3, test3);
    std::set<int> a, b;
    for (int i = 0; i < test.count(); ++i)
        a.insert(static_cast<int>(test.images.data()[static_cast<int64_t>(i) * 48]));
    for (int i = 0; i < test3.count(); ++i)
        b.insert(static_cast<int>(test3.images.data()[static_cast<int64_t>(i) * 48]));
    CHECK(a != b);
}

TEST_CASE("data: stratified subset sizes") {
    Dataset d = make_synthetic(3, 50, 4, 4, 17);
    Dataset tenth = stratified_subset(d, 0.1, 5);
    CHECK(tenth.count() == 15);
    std::map<int, int> per_class;
    for (int y : tenth.labels) ++per_class[y];
    for (int c = 0; c < 3; ++c) CHECK(per_class[c] == 5);

    Dataset none = stratified_subset(d, 0.0, 5);
    CHECK(none.count() == 0);
    CHECK(none.classes() == 3);

    Dataset all = stratified_subset(d, 1.0, 5);
    CHECK(all.count() == d.count());

    CHECK_THROWS_WITH_AS(stratified_subset(d, 1.5, 5), doctest::Contains("outside [0,1]"),
                         std::runtime_error);
}

TEST_CASE("data: synthetic classes are color separable") {
    int classes = 6, per_class = 8;
    Dataset d = make_synthetic(classes, per_class, 8, 8, 123);
    CHECK(d.count() == 48);
    CHECK(d.images.size(1) == 3);
    CHECK(static_cast<int>(d.class_names.size()) == classes);
    CHECK(d.class_names[0] == "class_00");

    for (int64_t i = 0; i < d.images.numel(); ++i) {
        CHECK(d.images[i] >= -1.0);
        CHECK(d.images[i] <= 1.0);
    }

    // Mean channel color per class; every pair of classes must differ
    // noticeably in at least one channel, or the dataset would not be the
    // quick-to-separate benchmark the desk runs rely on.
    std::vector<std::array<double, 3>> mean(static_cast<size_t>(classes)); // value-initialized to zero
    int64_t plane = 64;
    for (int i = 0; i < d.count(); ++i) {
        int y = d.labels[static_cast<size_t>(i)];
        const double* px = d.images.data() + static_cast<int64_t>(i) * 3 * plane;
        for (int k = 0; k < 3; ++k)
            for (int64_t j = 0; j < plane; ++j)
                mean[static_cast<size_t>(y)][static_cast<size_t>(k)] += px[k * plane + j];
    }
    for (auto& m : mean)
        for (double& v : m) v /= static_cast<double>(per_class) * plane;
    for (int a = 0; a < classes; ++a)
        for (int b = a + 1; b < classes; ++b) {
            double gap = 0.0;
            for (int k = 0; k < 3; ++k)
                gap = std::max(gap, std::abs(mean[static_cast<size_t>(a)][static_cast<size_t>(k)]
                                             - mean[static_cast<size_t>(b)][static_cast<size_t>(k)]));
            CHECK(gap > 0.2);
        }

    // Same seed, same pixels; the recipe is deterministic.
    Dataset d2 = make_synthetic(classes, per_class, 8, 8, 123);
    for (int64_t i = 0; i < d.images.numel(); ++i) CHECK(d2.images[i] == d.images[i]);

    CHECK_THROWS_WITH_AS(make_synthetic(1, 4, 8, 8, 1), doctest::Contains("at least two"),
                         std::runtime_error);
}

TEST_CASE("data: write_image_tree guards") {
    Dataset empty;
    CHECK_THROWS_WITH_AS(write_image_tree(empty, fresh_dir("tree_guard")),
                         doctest::Contains("empty dataset"), std::runtime_error);
}
