#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "traffic/core.hpp"

namespace traffic {

/// One captured camera image. Frames live only until their batch is consumed.
struct Frame {
    SourceId source;
    Instant captured_at;
    std::vector<std::uint8_t> payload;
    std::string payload_format = "jpeg";
    double download_ms = 0.0;
};

struct FrameBatch {
    std::uint64_t batch_id = 0;
    std::vector<Frame> frames;
};

}  // namespace traffic
