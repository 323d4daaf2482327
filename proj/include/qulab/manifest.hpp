#ifndef QULAB_MANIFEST_HPP_
#define QULAB_MANIFEST_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace qulab {

struct StageRecord {
  bool done = false;
  std::string error;                         // last failure message, empty when clean
  std::map<std::string, uint32_t> outputs;   // run-dir-relative path -> CRC-32
  std::vector<std::string> files_read;       // access audit
};

// Persistent record of one run: which stages completed, what they produced,
// and what they read. A stage is only trusted when its outputs still match
// their recorded checksums.
struct RunManifest {
  std::string run_id;
  std::string created_at;
  std::string updated_at;
  uint64_t seed = 0;
  std::map<std::string, StageRecord> stages;

  static RunManifest load(const std::string& path);
  void save(const std::string& path) const;

  bool stage_done(const std::string& name) const;
};

std::string timestamp_utc();

}  // namespace qulab

#endif  // QULAB_MANIFEST_HPP_
