#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dialhall {

// HWC image with values in [0,1].
struct ImageInput {
    std::string id;
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> pixels;

    double at(int y, int x, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
    double& at(int y, int x, int c) {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
};

ImageInput load_ppm(const std::string& path);
void save_ppm(const ImageInput& img, const std::string& path);

// Named flat colors used by the procedural image scheme.
const std::vector<std::string>& toy_color_names();

// Deterministic procedural image: a flat color with seeded per-pixel jitter.
ImageInput synth_color_image(std::string_view color, uint64_t seed, int h, int w);

// Resolves an image reference to pixels. "toy:<color>:<seed>" is synthesized
// at the requested resolution; anything else is loaded as a PPM file path.
ImageInput resolve_image_ref(std::string_view ref, int h, int w);

}  // namespace dialhall
