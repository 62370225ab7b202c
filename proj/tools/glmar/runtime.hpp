#pragma once

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace glmar::cli {

inline constexpr const char* kVersion = "0.1.0";

using Json = nlohmann::ordered_json;

/// GLMAR_WORKERS if set, else the hardware thread count (at least 1).
int default_workers();

/// Runs body(i) for i in [0, n) on up to `workers` threads. The first
/// exception thrown by any task is rethrown after all threads finish.
void parallel_for(int n, int workers, const std::function<void(int)>& body);

/// 64-bit FNV-1a of the file contents, as 16 hex digits.
std::string hash_file(const std::filesystem::path& path);

/// Per-task seed from a base seed and an index (splitmix64 mixing).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

/// Creates `dir`. A non-empty directory is an error unless `force`, in
/// which case it must hold a manifest.json from an earlier run and is
/// cleared.
void prepare_output(const std::filesystem::path& dir, bool force);

/// Hashes of every regular file under `dir` except the manifest and
/// timing files, keyed by relative path in sorted order.
Json hash_tree(const std::filesystem::path& dir);

/// manifest.json: tool, version, command, resolved config, input hashes,
/// output hashes. Deliberately free of timestamps and timings.
void write_manifest(const std::filesystem::path& dir, const std::string& command, const Json& config,
                    const Json& inputs, const std::vector<std::string>& warnings);

void write_json(const std::filesystem::path& path, const Json& doc);

/// "rep_007"
std::string rep_dir_name(int rep);

}  // namespace glmar::cli
