#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fcns/error.hpp"
#include "fcns/image.hpp"
#include "fcns/net.hpp"
#include "fcns/reader_study.hpp"

namespace fcns::testing {

std::filesystem::path data_dir();

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "fcns");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

/// True when fn throws an fcns::Error of exactly this kind.
bool throws_kind(const std::function<void()>& fn, ErrorKind kind);

Image gradient_image(int width, int height, int channels);

std::string read_text(const std::filesystem::path& path);

struct GradCheckEntry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  // Draws discarded because [p - step, p + step] crosses a ReLU or max-pool
  // switch, detected as disagreement between the step and step/2 central
  // differences. Such draws say nothing about the analytic gradient.
  int redrawn = 0;

  double worst() const;
};

// Central differences of the float64 training loss against the analytic
// gradient at `count` randomly drawn trainable scalars of a desk network.
// The step actually taken is measured after rounding to float32 storage.
// rel = |a - n| / max(|a|, |n|), or 0 when both are below 1e-10.
GradCheckReport gradient_check(int count, double step, std::uint64_t seed, int batch = 4,
                               int size = 32);

// Independent metric oracles.
// AUC by counting every (positive, negative) pair; ties score one half.
double pair_count_auc(const std::vector<double>& scores, const std::vector<bool>& positives);
// Average precision by re-counting TP and FP at every distinct threshold.
double swept_average_precision(const std::vector<double>& scores,
                               const std::vector<bool>& positives);
// Two-sided exact Mann-Whitney p by enumerating every split of the pooled
// values (pool size <= 20).
double enumerated_mann_whitney_p(const std::vector<double>& a, const std::vector<double>& b);

// Ten reader-study cases with small PNGs under dir; returns the cases file.
// Labels cycle through the five classes; the model is wrong on C01, C04,
// C07 and C10, and even-numbered cases carry an overlay.
std::filesystem::path write_reader_fixture(const std::filesystem::path& dir);

struct HttpReply {
  int status = 0;
  std::map<std::string, std::string> headers;  // lower-cased names
  std::string body;
};

// One HTTP/1.1 exchange over a plain socket to 127.0.0.1 (Connection: close).
HttpReply http_request(int port, const std::string& method, const std::string& target,
                       const std::string& body = {},
                       const std::vector<std::string>& headers = {});

}  // namespace fcns::testing
