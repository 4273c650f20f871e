# Utils package - Config parsing and output handling
