#include "data/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace dfkd {
namespace data {

namespace fs = std::filesystem;

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error("data: " + msg);
}

// Reads one whitespace-delimited header token, skipping '#' comment lines.
std::string next_token(std::istream& is) {
    std::string tok;
    int c = is.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = is.get();
        } else if (std::isspace(c)) {
            if (!tok.empty()) break;
        } else {
            tok.push_back(static_cast<char>(c));
        }
        if (!std::isspace(c) || tok.empty()) c = is.get();
        else break;
    }
    return tok;
}

int parse_header_int(std::istream& is, const std::string& path, const char* what) {
    std::string tok = next_token(is);
    require(!tok.empty(), path + ": truncated header, missing " + std::string(what));
    try {
        return std::stoi(tok);
    } catch (const std::exception&) {
        throw std::runtime_error("data: " + path + ": bad " + std::string(what) + " '" + tok + "'");
    }
}

} // namespace

RasterImage read_raster(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "cannot open " + path);

    std::string magic = next_token(is);
    RasterImage img;
    if (magic == "P6") img.channels = 3;
    else if (magic == "P5") img.channels = 1;
    else throw std::runtime_error("data: " + path + ": unsupported magic '" + magic + "', expected P5 or P6");

    img.width = parse_header_int(is, path, "width");
    img.height = parse_header_int(is, path, "height");
    int maxval = parse_header_int(is, path, "maxval");
    require(img.width > 0 && img.height > 0, path + ": non-positive dimensions");
    require(maxval == 255, path + ": only maxval 255 is supported, got " + std::to_string(maxval));

    size_t bytes = static_cast<size_t>(img.width) * static_cast<size_t>(img.height) *
                   static_cast<size_t>(img.channels);
    img.pixels.resize(bytes);
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(bytes));
    require(is.gcount() == static_cast<std::streamsize>(bytes), path + ": pixel payload is truncated");
    return img;
}

void write_raster(const std::string& path, const RasterImage& img) {
    require(img.channels == 1 || img.channels == 3,
            "raster images carry 1 or 3 channels, got " + std::to_string(img.channels));
    require(img.width > 0 && img.height > 0, "raster dimensions must be positive");
    size_t bytes = static_cast<size_t>(img.width) * static_cast<size_t>(img.height) *
                   static_cast<size_t>(img.channels);
    require(img.pixels.size() == bytes, "raster pixel buffer does not match its dimensions");

    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        require(os.good(), "cannot write " + path);
        os << (img.channels == 3 ? "P6" : "P5") << '\n'
           << img.width << ' ' << img.height << '\n' << "255\n";
        os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(bytes));
        require(os.good(), "short write to " + path);
    }
    fs::rename(tmp, path);
}

RasterImage raster_from_chw(const Tensor& chw) {
    require(chw.rank() == 3, "expected a (C,H,W) tensor, got " + chw.shape_str());
    RasterImage img;
    img.channels = chw.size(0);
    img.height = chw.size(1);
    img.width = chw.size(2);
    require(img.channels == 1 || img.channels == 3,
            "raster images carry 1 or 3 channels, got " + std::to_string(img.channels));
    img.pixels.resize(static_cast<size_t>(chw.numel()));
    int64_t plane = static_cast<int64_t>(img.height) * img.width;
    for (int c = 0; c < img.channels; ++c)
        for (int64_t i = 0; i < plane; ++i) {
            double v = std::round((chw[c * plane + i] + 1.0) * 127.5);
            v = std::clamp(v, 0.0, 255.0);
            img.pixels[static_cast<size_t>(i * img.channels + c)] = static_cast<uint8_t>(v);
        }
    return img;
}

Tensor chw_from_raster(const RasterImage& img) {
    Tensor out({img.channels, img.height, img.width});
    int64_t plane = static_cast<int64_t>(img.height) * img.width;
    for (int c = 0; c < img.channels; ++c)
        for (int64_t i = 0; i < plane; ++i)
            out[c * plane + i] = static_cast<double>(img.pixels[static_cast<size_t>(i * img.channels + c)]) / 127.5 - 1.0;
    return out;
}

Tensor resize_bilinear(const Tensor& chw, int out_h, int out_w) {
    require(chw.rank() == 3, "expected a (C,H,W) tensor, got " + chw.shape_str());
    require(out_h > 0 && out_w > 0, "target size must be positive");
    int c = chw.size(0), in_h = chw.size(1), in_w = chw.size(2);
    if (in_h == out_h && in_w == out_w) return chw;

    Tensor out({c, out_h, out_w});
    double sy = static_cast<double>(in_h) / out_h;
    double sx = static_cast<double>(in_w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(in_h - 1));
        int y0 = static_cast<int>(fy);
        int y1 = std::min(y0 + 1, in_h - 1);
        double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(in_w - 1));
            int x0 = static_cast<int>(fx);
            int x1 = std::min(x0 + 1, in_w - 1);
            double wx = fx - x0;
            for (int k = 0; k < c; ++k) {
                double top = (1.0 - wx) * chw.at(k, y0, x0) + wx * chw.at(k, y0, x1);
                double bottom = (1.0 - wx) * chw.at(k, y1, x0) + wx * chw.at(k, y1, x1);
                out.at(k, y, x) = (1.0 - wy) * top + wy * bottom;
            }
        }
    }
    return out;
}

Tensor slice_sample(const Tensor& batch, int index) {
    require(batch.rank() == 4, "expected a (M,C,H,W) batch, got " + batch.shape_str());
    require(index >= 0 && index < batch.size(0),
            "sample " + std::to_string(index) + " out of range for batch of " + std::to_string(batch.size(0)));
    Tensor out({batch.size(1), batch.size(2), batch.size(3)});
    int64_t n = out.numel();
    std::copy(batch.data() + index * n, batch.data() + (index + 1) * n, out.data());
    return out;
}

Dataset load_image_tree(const std::string& root, int out_h, int out_w) {
    require(fs::is_directory(root), "dataset root " + root + " is not a directory");

    std::vector<std::string> class_dirs;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory()) class_dirs.push_back(entry.path().filename().string());
    std::sort(class_dirs.begin(), class_dirs.end());
    require(!class_dirs.empty(), "dataset root " + root + " holds no class directories");

    struct Pending {
        Tensor chw;
        int label;
    };
    std::vector<Pending> loaded;
    std::vector<std::string> failures;
    int channels = 0;

    for (size_t label = 0; label < class_dirs.size(); ++label) {
        fs::path dir = fs::path(root) / class_dirs[label];
        std::vector<std::string> files;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (!entry.is_regular_file()) continue;
            std::string ext = entry.path().extension().string();
            if (ext == ".ppm" || ext == ".pgm") files.push_back(entry.path().string());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) {
            failures.push_back(dir.string() + ": no raster images");
            continue;
        }
        for (const std::string& file : files) {
            try {
                RasterImage img = read_raster(file);
                Tensor chw = resize_bilinear(chw_from_raster(img), out_h, out_w);
                if (channels == 0) channels = chw.size(0);
                if (chw.size(0) != channels)
                    throw std::runtime_error("data: " + file + ": has " + std::to_string(chw.size(0)) +
                                             " channels, the tree started with " + std::to_string(channels));
                loaded.push_back({std::move(chw), static_cast<int>(label)});
            } catch (const std::exception& e) {
                failures.push_back(e.what());
            }
        }
    }

    if (!failures.empty()) {
        std::ostringstream os;
        os << "data: " << failures.size() << " file(s) failed to ingest from " << root << ":";
        for (const std::string& f : failures) os << "\n  " << f;
        throw std::runtime_error(os.str());
    }

    Dataset d;
    d.class_names = class_dirs;
    d.labels.reserve(loaded.size());
    d.images = Tensor({static_cast<int>(loaded.size()), channels, out_h, out_w});
    int64_t n = static_cast<int64_t>(channels) * out_h * out_w;
    for (size_t i = 0; i < loaded.size(); ++i) {
        std::copy(loaded[i].chw.data(), loaded[i].chw.data() + n,
                  d.images.data() + static_cast<int64_t>(i) * n);
        d.labels.push_back(loaded[i].label);
    }
    return d;
}

void write_image_tree(const Dataset& d, const std::string& root) {
    require(d.count() > 0, "refusing to write an empty dataset to " + root);
    require(static_cast<int>(d.labels.size()) == d.count(), "dataset labels do not match its image count");
    fs::create_directories(root);

    std::vector<int> written(static_cast<size_t>(d.classes()), 0);
    for (int i = 0; i < d.count(); ++i) {
        int label = d.labels[static_cast<size_t>(i)];
        require(label >= 0 && label < d.classes(),
                "label " + std::to_string(label) + " outside the class range");
        fs::path dir = fs::path(root) / d.class_names[static_cast<size_t>(label)];
        fs::create_directories(dir);
        char name[32];
        std::snprintf(name, sizeof name, "img_%05d.ppm", written[static_cast<size_t>(label)]++);
        write_raster((dir / name).string(), raster_from_chw(slice_sample(d.images, i)));
    }
}

namespace {

Dataset take_indices(const Dataset& d, const std::vector<int>& indices) {
    Dataset out;
    out.class_names = d.class_names;
    out.labels.reserve(indices.size());
    if (indices.empty()) return out;
    std::vector<int> shape = d.images.shape();
    shape[0] = static_cast<int>(indices.size());
    out.images = Tensor(shape);
    int64_t n = d.images.numel() / d.images.size(0);
    for (size_t i = 0; i < indices.size(); ++i) {
        std::copy(d.images.data() + indices[i] * n, d.images.data() + (indices[i] + 1) * n,
                  out.images.data() + static_cast<int64_t>(i) * n);
        out.labels.push_back(d.labels[static_cast<size_t>(indices[i])]);
    }
    return out;
}

// Shuffles each class's sample list under the seed and cuts it at the
// fraction; the leading part lands in `first`, the rest in `second`.
void stratified_cut(const Dataset& d, double fraction, uint64_t seed,
                    std::vector<int>& first, std::vector<int>& second) {
    require(fraction >= 0.0 && fraction <= 1.0,
            "fraction " + std::to_string(fraction) + " outside [0,1]");
    std::map<int, std::vector<int>> per_class;
    for (int i = 0; i < d.count(); ++i) per_class[d.labels[static_cast<size_t>(i)]].push_back(i);

    Rng rng(seed);
    for (auto& [label, members] : per_class) {
        rng.shuffle(members);
        auto take = static_cast<size_t>(std::llround(fraction * static_cast<double>(members.size())));
        for (size_t i = 0; i < members.size(); ++i)
            (i < take ? first : second).push_back(members[i]);
    }
    std::sort(first.begin(), first.end());
    std::sort(second.begin(), second.end());
}

} // namespace

void split_stratified(const Dataset& all, double train_fraction, uint64_t seed,
                      Dataset& train, Dataset& test) {
    std::vector<int> first, second;
    stratified_cut(all, train_fraction, seed, first, second);
    train = take_indices(all, first);
    test = take_indices(all, second);
}

Dataset stratified_subset(const Dataset& d, double fraction, uint64_t seed) {
    std::vector<int> first, second;
    stratified_cut(d, fraction, seed, first, second);
    return take_indices(d, first);
}

Dataset make_synthetic(int classes, int per_class, int h, int w, uint64_t seed) {
    require(classes >= 2, "a synthetic dataset needs at least two classes");
    require(per_class > 0 && h > 0 && w > 0, "synthetic dataset dimensions must be positive");

    Dataset d;
    d.images = Tensor({classes * per_class, 3, h, w});
    d.labels.resize(static_cast<size_t>(classes * per_class));
    for (int c = 0; c < classes; ++c) {
        char name[32];
        std::snprintf(name, sizeof name, "class_%02d", c);
        d.class_names.push_back(name);
    }

    Rng rng(seed);
    int64_t plane = static_cast<int64_t>(h) * w;
    for (int c = 0; c < classes; ++c) {
        // Hue wheel position of the class, saturated and full-bright.
        double hue = 6.0 * static_cast<double>(c) / static_cast<double>(classes);
        int sector = static_cast<int>(hue) % 6;
        double f = hue - std::floor(hue);
        double rgb[3] = {0.0, 0.0, 0.0};
        switch (sector) {
            case 0: rgb[0] = 1.0; rgb[1] = f; break;
            case 1: rgb[0] = 1.0 - f; rgb[1] = 1.0; break;
            case 2: rgb[1] = 1.0; rgb[2] = f; break;
            case 3: rgb[1] = 1.0 - f; rgb[2] = 1.0; break;
            case 4: rgb[2] = 1.0; rgb[0] = f; break;
            default: rgb[2] = 1.0 - f; rgb[0] = 1.0; break;
        }

        for (int s = 0; s < per_class; ++s) {
            int idx = c * per_class + s;
            d.labels[static_cast<size_t>(idx)] = c;
            double* px = d.images.data() + static_cast<int64_t>(idx) * 3 * plane;

            double brightness = rng.uniform(0.55, 0.95);
            // A brighter or darker patch adds spatial structure that carries
            // no class information.
            int cy = static_cast<int>(rng.uniform_int(h));
            int cx = static_cast<int>(rng.uniform_int(w));
            int radius = 2 + static_cast<int>(rng.uniform_int(std::max(2, h / 3)));
            double patch_gain = rng.uniform() < 0.5 ? 0.55 : 1.45;
            bool round_patch = rng.uniform() < 0.5;

            for (int k = 0; k < 3; ++k) {
                double base = (2.0 * rgb[k] - 1.0) * brightness;
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        bool inside = round_patch
                                          ? (y - cy) * (y - cy) + (x - cx) * (x - cx) <= radius * radius
                                          : std::abs(y - cy) <= radius && std::abs(x - cx) <= radius;
                        double v = inside ? base * patch_gain : base;
                        v += rng.uniform(-0.15, 0.15);
                        px[k * plane + y * static_cast<int64_t>(w) + x] = std::clamp(v, -1.0, 1.0);
                    }
            }
        }
    }
    return d;
}

} // namespace data
} // namespace dfkd
