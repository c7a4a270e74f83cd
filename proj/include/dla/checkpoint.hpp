#pragma once

#include <cstdint>
#include <string>

#include "dla/params.hpp"

namespace dla {

// Versioned little-endian binary checkpoint.
//
//   magic "DLAW" | u32 version=1 | u32 n_params | n_params records
//                | u32 n_state  | n_state records
//
// record: u16 name length | UTF-8 name | u8 dtype (0=f32, 1=f64, 2=u64)
//         | u8 rank | u64 dims[rank] | raw little-endian values
//
// The first section holds every parameter tensor (running BN statistics
// included) in store order. The second holds the optimizer state in the same
// record encoding: per trainable parameter "<name>#m" and "<name>#v", then
// "#step" and "#epoch" as scalar u64 records. Round-trips are bit-exact.

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
    uint64_t step = 0;   // completed optimizer steps
    uint64_t epoch = 0;  // completed epochs
};

template <class T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store, const CheckpointMeta& meta);

// Loads into an already-built store; every record must match an existing
// parameter in name, dtype and shape, and every parameter must be present.
template <class T>
CheckpointMeta load_checkpoint(const std::string& path, ParamStore<T>& store);

// Peeks at the first record's dtype so callers can pick the precision before
// building the model. Returns 0 for f32, 1 for f64.
int checkpoint_dtype(const std::string& path);

}  // namespace dla
