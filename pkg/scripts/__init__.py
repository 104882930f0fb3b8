"""开发脚本。"""
