#include "runtime.hpp"

#include "glmar/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

namespace glmar::cli {

namespace fs = std::filesystem;

int default_workers() {
  if (const char* env = std::getenv("GLMAR_WORKERS")) {
    const int w = std::atoi(env);
    if (w > 0) return w;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(int n, int workers, const std::function<void(int)>& body) {
  workers = std::clamp(workers, 1, std::max(1, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::string hash_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void prepare_output(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw std::invalid_argument(dir.string() + " exists and is not empty (use --force to overwrite)");
    if (!fs::exists(dir / "manifest.json"))
      throw std::invalid_argument(dir.string() + " has no manifest.json; refusing to clear a directory this tool did not write");
    for (const auto& entry : fs::directory_iterator(dir)) fs::remove_all(entry.path());
  }
  fs::create_directories(dir);
}

Json hash_tree(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file()) {
      const auto name = entry.path().filename().string();
      if (name == "manifest.json" || name == "timing.json") continue;
      files.push_back(fs::relative(entry.path(), dir));
    }
  std::sort(files.begin(), files.end());
  Json out = Json::object();
  for (const auto& f : files) out[f.generic_string()] = hash_file(dir / f);
  return out;
}

void write_json(const fs::path& path, const Json& doc) {
  std::ofstream out(path);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  out << doc.dump(2) << '\n';
}

void write_manifest(const fs::path& dir, const std::string& command, const Json& config, const Json& inputs,
                    const std::vector<std::string>& warnings) {
  Json m;
  m["tool"] = "glmar";
  m["version"] = kVersion;
  m["command"] = command;
  m["config"] = config;
  m["inputs"] = inputs;
  m["warnings"] = warnings;
  m["outputs"] = hash_tree(dir);
  write_json(dir / "manifest.json", m);
}

std::string rep_dir_name(int rep) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "rep_%03d", rep);
  return buf;
}

}  // namespace glmar::cli
