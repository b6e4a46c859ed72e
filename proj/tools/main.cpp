#include "cdeshift/cli.hpp"

int main(int argc, char** argv)
{
  return cdeshift::cli::run(argc, argv);
}
