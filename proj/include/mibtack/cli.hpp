#pragma once
namespace mibt { int cli_main(int argc, char** argv); }
