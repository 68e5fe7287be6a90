#include "dialhall/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dialhall/errors.hpp"
#include "dialhall/rng.hpp"

namespace dialhall {

namespace {

struct NamedColor {
    const char* name;
    double r, g, b;
};

constexpr std::array<NamedColor, 8> kPalette = {{
    {"red", 0.85, 0.10, 0.10},
    {"green", 0.10, 0.75, 0.15},
    {"blue", 0.10, 0.20, 0.85},
    {"yellow", 0.90, 0.85, 0.10},
    {"purple", 0.55, 0.10, 0.70},
    {"orange", 0.95, 0.55, 0.05},
    {"cyan", 0.05, 0.80, 0.80},
    {"pink", 0.95, 0.45, 0.65},
}};

const NamedColor* find_color(std::string_view name) {
    for (const auto& c : kPalette) {
        if (name == c.name) return &c;
    }
    return nullptr;
}

int read_ppm_int(std::istream& in) {
    // skips whitespace and '#' comments
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF) throw DataError("truncated ppm header");
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw DataError("malformed ppm header");
    return value;
}

}  // namespace

ImageInput load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image file: " + path);
    std::string magic;
    in >> magic;
    if (magic != "P6" && magic != "P3") {
        throw DataError("unsupported image format (want P6/P3 ppm): " + path);
    }
    const int w = read_ppm_int(in);
    const int h = read_ppm_int(in);
    const int maxval = read_ppm_int(in);
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
        throw DataError("bad ppm dimensions in " + path);
    }
    ImageInput img;
    img.id = path;
    img.width = w;
    img.height = h;
    img.channels = 3;
    img.pixels.resize(static_cast<size_t>(w) * h * 3);
    const double scale = 1.0 / maxval;
    if (magic == "P6") {
        if (maxval > 255) throw DataError("16-bit P6 not supported: " + path);
        std::vector<unsigned char> raw(img.pixels.size());
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (static_cast<size_t>(in.gcount()) != raw.size()) {
            throw DataError("truncated ppm pixel data in " + path);
        }
        for (size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] * scale;
    } else {
        for (auto& p : img.pixels) p = read_ppm_int(in) * scale;
    }
    return img;
}

void save_ppm(const ImageInput& img, const std::string& path) {
    if (img.channels != 3) throw DataError("save_ppm expects 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write image file: " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    for (double p : img.pixels) {
        const double v = std::clamp(p, 0.0, 1.0);
        out.put(static_cast<char>(std::lround(v * 255.0)));
    }
}

const std::vector<std::string>& toy_color_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& c : kPalette) v.emplace_back(c.name);
        return v;
    }();
    return names;
}

ImageInput synth_color_image(std::string_view color, uint64_t seed, int h, int w) {
    const NamedColor* c = find_color(color);
    if (!c) throw DataError("unknown toy color: " + std::string(color));
    ImageInput img;
    img.id = "toy:" + std::string(color) + ":" + std::to_string(seed);
    img.height = h;
    img.width = w;
    img.channels = 3;
    img.pixels.resize(static_cast<size_t>(h) * w * 3);
    Rng rng(mix_seed(hash_str(color), seed));
    const double base[3] = {c->r, c->g, c->b};
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        const double jitter = (rng.next_double() - 0.5) * 0.2;
        img.pixels[i] = std::clamp(base[i % 3] + jitter, 0.0, 1.0);
    }
    return img;
}

ImageInput resolve_image_ref(std::string_view ref, int h, int w) {
    if (ref.rfind("toy:", 0) == 0) {
        std::string_view rest = ref.substr(4);
        uint64_t seed = 0;
        const size_t colon = rest.find(':');
        std::string_view color = rest;
        if (colon != std::string_view::npos) {
            color = rest.substr(0, colon);
            const std::string seed_str(rest.substr(colon + 1));
            try {
                seed = std::stoull(seed_str);
            } catch (const std::exception&) {
                throw DataError("bad seed in image ref: " + std::string(ref));
            }
        }
        return synth_color_image(color, seed, h, w);
    }
    return load_ppm(std::string(ref));
}

}  // namespace dialhall
