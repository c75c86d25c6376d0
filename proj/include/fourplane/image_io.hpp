#pragma once

// Minimal PNG/APNG writers (stored deflate blocks, no external codec) for
// frame dumps and animated previews.

#include "fourplane/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace fourplane::image_io {

// rgb8: H*W*3 bytes, row-major
void write_png(const std::string& path, i64 height, i64 width,
               const std::vector<uint8_t>& rgb8);

// animated PNG; delay in seconds per frame
void write_apng(const std::string& path, i64 height, i64 width,
                const std::vector<std::vector<uint8_t>>& frames, double delay = 0.125);

// map one [-1,1] frame of a [T,H,W,3] clip to rgb8
std::vector<uint8_t> frame_to_rgb8(const Tensor<float>& clip, i64 frame);

// dump every frame as frame_NNN.png under dir, plus preview.png (APNG)
void dump_clip(const std::string& dir, const Tensor<float>& clip, bool frames_too = true);

} // namespace fourplane::image_io
