#pragma once

#include <string>
#include <vector>

#include "mtrans/kspace.hpp"
#include "mtrans/model.hpp"
#include "mtrans/tensor.hpp"

namespace mtrans {

/// Writes `bytes` to a temporary file beside `path` and renames it into
/// place, so a crashed or failed write never leaves a partial file behind.
void atomic_write_file(const std::string& path, const std::string& bytes);

/// Binary tensor container: magic "MTT1", one dtype byte (0 = f32, 1 = f64,
/// 2 = complex64, 3 = complex128), one rank byte, rank little-endian u64
/// dims, then the row-major little-endian payload (complex interleaved
/// re, im). Real tensors use their own dtype code; grids write complex128.
void write_mtt(const std::string& path, const Tensor& t);
void write_mtt(const std::string& path, const ComplexGrid& g);

/// Reads a real-valued container (dtype code 0 or 1); complex files are
/// rejected here, use read_mtt_complex.
Tensor read_mtt(const std::string& path);

/// Reads a complex rank-2 container (dtype code 2 or 3) into a grid.
ComplexGrid read_mtt_complex(const std::string& path);

/// Column masks travel as rank-1 f32 vectors of 0/1 flags.
void write_mask_mtt(const std::string& path, const SamplingMask& m);
SamplingMask read_mask_mtt(const std::string& path);

/// Loader stub for externally supplied volumes: a rank-2 container yields
/// one slice, a rank-3 container yields dim(0) slices.
std::vector<Tensor> read_mtt_volume(const std::string& path);

/// Binary PGM (P5) with 16-bit big-endian samples. Values are clamped to
/// [0, 1] and scaled to 0..65535.
void write_pgm(const std::string& path, const Tensor& img);

/// Reads a 16-bit P5 file back to values in [0, 1].
Tensor read_pgm(const std::string& path);

/// A checkpoint is a text manifest plus one rank-1 container holding every
/// parameter back to back. The manifest records the config and, per
/// parameter, its path, element offset into the blob, dims, and dtype.
/// Loading validates all of it against the registry the config implies.
void save_checkpoint(const std::string& manifest_path, const MTransConfig& cfg,
                     const ParamStore& params);

struct LoadedCheckpoint {
  MTransConfig config;
  MTransParams params;
};

LoadedCheckpoint load_checkpoint(const std::string& manifest_path);

/// "f32" / "f64" names used in manifests and config files.
std::string dtype_name(DType dt);
DType dtype_from_name(const std::string& name);

/// Deterministic shortest-exact decimal for doubles, so emitted files are
/// byte-identical across runs and parse back to the same bits.
std::string format_double(double v);

}  // namespace mtrans
