#pragma once

#include <memory>
#include <string>

#include "fcns/reader_study.hpp"

namespace fcns::reader {

// HTTP/1.1 JSON API over a ReaderStudy:
//   GET  /api/health
//   GET  /api/cases/next?reader=ID&mode=blind|assisted   200 | 204 | 404
//   POST /api/cases/{case_id}/responses                  201 | 404 | 409 | 422
//   GET  /api/cases/{case_id}/image                      PNG
//   GET  /api/cases/{case_id}/overlay                    PNG
//   POST /api/readers            (admin)                 201 | 200
//   GET  /api/summary            (admin)                 200 | 401
// Admin routes expect "Authorization: Bearer <token>".
class ReaderServer {
 public:
  ReaderServer(ReaderStudy& study, std::string admin_token);
  ~ReaderServer();
  ReaderServer(const ReaderServer&) = delete;
  ReaderServer& operator=(const ReaderServer&) = delete;

  /// Binds without serving; port 0 picks a free port. Returns the port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace fcns::reader
