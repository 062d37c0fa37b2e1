// Sequential write workload with a fio-style bandwidth log.
//
// Writes fixed-size blocks to one file, optionally flushing after every
// `--fsync` blocks, and appends one "msec,kbps,1,bs" line per log interval.
// With a non-zero --runtime the file is rewritten from the start until the
// runtime has elapsed (fio's time_based).

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

namespace {

std::uint64_t parse_size(const std::string& text) {
  std::size_t pos = 0;
  auto n = std::stoull(text, &pos);
  if (pos == text.size()) return n;
  switch (text[pos] | 0x20) {
    case 'k': return n << 10;
    case 'm': return n << 20;
    case 'g': return n << 30;
  }
  throw CLI::ValidationError("size", "unknown suffix in " + text);
}

struct Rng {
  std::uint64_t s;
  std::uint64_t next() {
    s ^= s << 13;
    s ^= s >> 7;
    s ^= s << 17;
    return s;
  }
  void fill(std::vector<char>& buf) {
    for (std::size_t i = 0; i + 8 <= buf.size(); i += 8) {
      auto v = next();
      std::memcpy(buf.data() + i, &v, 8);
    }
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequential write bandwidth workload"};
  std::string size_text = "64m", bs_text = "4k", file, bw_log;
  unsigned runtime_s = 0, log_ms = 500, fsync_every = 1;
  bool refill = true, keep = false;
  app.add_option("--size", size_text, "bytes per pass (k/m/g suffix)");
  app.add_option("--bs", bs_text, "block size");
  app.add_option("--runtime", runtime_s, "minimum seconds to keep writing; 0 = one pass");
  app.add_option("--log-interval-ms", log_ms, "bandwidth log resolution")->check(CLI::PositiveNumber);
  app.add_option("--fsync", fsync_every, "flush after this many blocks; 0 = never");
  app.add_option("--refill-buffers", refill, "fresh buffer content for every block");
  app.add_option("--file", file, "target file")->required();
  app.add_option("--bw-log", bw_log, "bandwidth log path")->required();
  app.add_flag("--keep", keep, "leave the target file in place");
  CLI11_PARSE(app, argc, argv);

  std::uint64_t size = 0, bs = 0;
  try {
    size = parse_size(size_text);
    bs = parse_size(bs_text);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "cwb-seqwrite: %s\n", e.what());
    return 2;
  }
  if (bs == 0 || size < bs) {
    std::fprintf(stderr, "cwb-seqwrite: size must be at least one block\n");
    return 2;
  }

  int fd = ::open(file.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) {
    std::perror("cwb-seqwrite: open");
    return 1;
  }
  std::ofstream log(bw_log, std::ios::trunc);
  if (!log) {
    std::fprintf(stderr, "cwb-seqwrite: cannot write %s\n", bw_log.c_str());
    return 1;
  }

  using clock = std::chrono::steady_clock;
  std::vector<char> buf(bs, 0);
  Rng rng{0x9e3779b97f4a7c15ULL};
  rng.fill(buf);

  const auto start = clock::now();
  const auto interval = std::chrono::milliseconds(log_ms);
  auto next_log = start + interval;
  std::uint64_t interval_bytes = 0, total = 0, offset = 0, blocks = 0;
  long long samples = 0;

  while (true) {
    if (refill) rng.fill(buf);
    if (::pwrite(fd, buf.data(), bs, static_cast<off_t>(offset)) != static_cast<ssize_t>(bs)) {
      std::perror("cwb-seqwrite: write");
      return 1;
    }
    ++blocks;
    if (fsync_every && blocks % fsync_every == 0 && ::fdatasync(fd) != 0) {
      std::perror("cwb-seqwrite: fdatasync");
      return 1;
    }
    offset += bs;
    total += bs;
    interval_bytes += bs;

    auto now = clock::now();
    while (now >= next_log) {
      auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(next_log - start).count();
      double kbps = static_cast<double>(interval_bytes) / 1024.0 / (log_ms / 1000.0);
      log << ms << ',' << static_cast<long long>(kbps + 0.5) << ",1," << bs << '\n';
      interval_bytes = 0;
      next_log += interval;
      ++samples;
    }

    bool pass_done = offset + bs > size;
    if (pass_done) {
      if (runtime_s == 0 || now - start >= std::chrono::seconds(runtime_s)) break;
      offset = 0;
    }
  }
  ::fdatasync(fd);
  ::close(fd);
  log.flush();
  if (!keep) ::unlink(file.c_str());

  auto secs = std::chrono::duration<double>(clock::now() - start).count();
  std::printf("wrote %llu bytes in %.2f s, %lld samples\n",
              static_cast<unsigned long long>(total), secs, samples);
  return 0;
}
