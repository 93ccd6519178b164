#pragma once

#include <string>

#include "radioses/signal.hpp"

namespace radioses {

/// Binary IQ stream container: magic "RSIQ", u32 version, u32 sample rate,
/// u64 sample count, then interleaved float32 re/im pairs. Little-endian.
void write_iq(const std::string& path, const IqStream& s);
IqStream read_iq(const std::string& path);

}  // namespace radioses
