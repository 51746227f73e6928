#pragma once

#include "mfa/segnet.hpp"

#include <filesystem>
#include <string>

namespace mfa {

// A checkpoint is a pair of files sharing a stem:
//   <stem>.bin   "MFAPARAM" magic, u32 version, u32 scalar bytes, u64 count, raw values
//   <stem>.json  tag ("net" | "mean"), class count, dtype, parameter layout
struct Checkpoint {
    SegNet<float> net;
    std::string tag = "net";
};

void save_checkpoint(const std::filesystem::path& stem, const SegNet<float>& net, const std::string& tag);
Checkpoint load_checkpoint(const std::filesystem::path& stem);

} // namespace mfa
